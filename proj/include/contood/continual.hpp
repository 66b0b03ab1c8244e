#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "contood/dataset.hpp"
#include "contood/network.hpp"
#include "contood/reporting.hpp"
#include "contood/scoring.hpp"
#include "contood/threshold_search.hpp"

namespace contood {

// How a new look-ahead estimate folds into the running eta.
//   pairwise:   eta <- (eta + eta_new) / 2
//   cumulative: eta <- mean(eta0, eta_1, ..., eta_k)
enum class EtaAveraging { pairwise, cumulative };

struct ProtocolConfig {
  SearchMetric metric = SearchMetric::g_mean;
  int batch_size = 32;              // samples per detection batch
  double ood_batch_fraction = 0.5;  // rho: batch is OOD iff flagged fraction >= rho
  TrainConfig train;
  std::vector<int> hidden_sizes{400, 128};
  EtaAveraging averaging = EtaAveraging::pairwise;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EtaRecord {
  int stage = 0;
  double eta_estimate = 0.0;  // LOOCV mean at stage 0, look-ahead optimum afterwards
  double eta_running = 0.0;   // value in force for the next detection round

  friend bool operator==(const EtaRecord&, const EtaRecord&) = default;
};

struct ContinualState {
  NetworkState net;
  ThresholdPolicy policy;
  std::vector<int> known_classes;             // original class id per internal label
  std::vector<LabeledDataset> stored_train;   // per internal label
  std::vector<EtaRecord> eta_history;
  std::vector<std::string> warnings;
};

// Splits a dataset whose labels are 0..K-1 into one dataset per label.
std::vector<LabeledDataset> split_by_class(const LabeledDataset& ds);

struct LoocvResult {
  double eta0 = 0.0;
  std::vector<double> per_class_etas;
  std::vector<SearchResult> searches;
};

// Leave-one-class-out: for each class i, train a fresh model on the other
// classes, then run the look-ahead search with class i's data as OOD.
// eta0 is the mean of the per-class optima. Requires at least 3 classes.
LoocvResult loocv_eta(std::span<const LabeledDataset> per_class, const ProtocolConfig& cfg);

// Trains the main model on the ID classes and fits its score statistics.
ContinualState initial_state(std::span<const LabeledDataset> per_class,
                             std::span<const int> class_ids, const ProtocolConfig& cfg,
                             double eta);

struct BatchVerdict {
  bool contains_ood = false;
  double flagged_fraction = 0.0;

  friend bool operator==(const BatchVerdict&, const BatchVerdict&) = default;
};

BatchVerdict batch_verdict(double flagged_fraction, double rho);
BatchVerdict detect_batch(const ContinualState& state, const LabeledDataset& batch,
                          const ProtocolConfig& cfg);

// Look-ahead search of the current model: stored ID train data against
// `ood_train`, using the current class statistics.
SearchResult lookahead_search(const ContinualState& state, const LabeledDataset& ood_train,
                              SearchMetric metric);

// Rebuilds mu/sigma for every known class from stored training data on the
// current network. Classes left with < 2 correct points keep their previous
// statistics and produce a warning.
void recompute_stats(ContinualState& state);

// After a batch was flagged: (1) look-ahead search for what eta would have
// been optimal, (2) fold it into the running eta, (3) accommodate the class,
// (4) recompute statistics, (5) log. With update_eta = false steps 1-2 are
// skipped and eta stays pinned. `precomputed`, when given, replaces step 1.
ContinualState on_detection(ContinualState state, const LabeledDataset& ood_train,
                            int original_class_id, const ProtocolConfig& cfg,
                            bool update_eta = true, const SearchResult* precomputed = nullptr);

struct NovelClass {
  int class_id = 0;
  LabeledDataset train;
  LabeledDataset test;
};

struct ProtocolOptions {
  bool dynamic = true;    // LOOCV + running average
  bool cheating = true;   // per-stage look-ahead optimum
  bool fixed = false;     // eta pinned at fixed_eta
  double fixed_eta = 1.0;
  std::vector<int> id_class_ids;  // original ids for checkpoints; default 0..C-1
  // Called after each accommodation with the 0-based stage index.
  std::function<void(int, const ContinualState&)> on_stage;
};

struct ProtocolResult {
  std::vector<StageReport> reports;
  std::vector<EtaRecord> eta_history;
  std::vector<BatchVerdict> detections;  // under the dynamic policy, or fixed if dynamic is off
  LoocvResult loocv;
  std::vector<std::string> warnings;
};

// Trains on the ID classes, estimates eta0 by LOOCV (dynamic only), then for
// each novel class: evaluates every requested method, runs detection and
// accommodates the class. One StageReport per (stage, method). The network
// trajectory does not depend on eta, so all methods share it.
ProtocolResult run_protocol(const LabeledDataset& id_train, const LabeledDataset& id_test,
                            std::span<const NovelClass> stream, const ProtocolConfig& cfg,
                            const ProtocolOptions& options = {});

// The same protocol with eta pinned (no LOOCV, no updates); eta = 1 is the
// mu - sigma rule.
ProtocolResult fixed_eta_baseline(const LabeledDataset& id_train, const LabeledDataset& id_test,
                                  std::span<const NovelClass> stream, const ProtocolConfig& cfg,
                                  double eta = 1.0);

}  // namespace contood
