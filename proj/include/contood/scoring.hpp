#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "contood/dataset.hpp"
#include "contood/network.hpp"

namespace contood {

inline constexpr int kOodLabel = -1;

struct ScoreRow {
  int true_label = kOodLabel;  // kOodLabel for OOD rows
  int argmax = 0;              // lowest index among maximal scores
  bool correct = false;        // true_label == argmax, never for OOD rows
  std::vector<double> scores;
};

struct ScoreTable {
  int n_classes = 0;
  std::vector<ScoreRow> rows;

  std::size_t size() const noexcept { return rows.size(); }
  bool empty() const noexcept { return rows.empty(); }
};

int argmax_lowest(std::span<const double> scores);

// Builds a row from raw scores; enforces the argmax/correct invariants.
ScoreRow make_score_row(int true_label, std::span<const double> scores);

// With ood = true every row is marked OOD regardless of the dataset labels.
ScoreTable build_score_table(const NetworkState& net, const LabeledDataset& ds, bool ood);

// CSV columns: true_label,argmax,correct,s_0..s_{C-1}. OOD rows carry -1.
void write_score_table_csv(std::ostream& out, const ScoreTable& table);
void write_score_table_csv(const std::filesystem::path& path, const ScoreTable& table);

struct ClassStats {
  std::vector<double> mu;
  std::vector<double> sigma;
  std::vector<int> n;

  int n_classes() const noexcept { return static_cast<int>(mu.size()); }
};

// Sample mean and (n-1) standard deviation of s_c over rows whose true label
// is c and which are correctly classified. Throws InsufficientDataError when
// some class has fewer than two such rows.
ClassStats fit_class_stats(const ScoreTable& table);

// As above, but a class with fewer than two correct rows keeps its entry from
// `fallback` (when it has one) and its id is appended to `fell_back`.
ClassStats fit_class_stats(const ScoreTable& table, const ClassStats& fallback,
                           std::vector<int>& fell_back);

// (mu_c - s) / sigma_c; throws DegenerateScaleError when sigma_c == 0.
double neg_z(const ClassStats& stats, int c, double s);

struct Decision {
  bool in_distribution = false;
  int predicted = 0;  // argmax class, meaningful for both outcomes

  friend bool operator==(const Decision&, const Decision&) = default;
};

struct ThresholdPolicy {
  double eta = 1.0;
  ClassStats stats;

  double threshold(int c) const { return stats.mu[c] - eta * stats.sigma[c]; }
};

// ID(c*) iff s_{c*} > mu_{c*} - eta * sigma_{c*}, with c* the lowest-index
// argmax. Equality resolves to OOD.
Decision decide(const ThresholdPolicy& policy, std::span<const double> scores);

}  // namespace contood
