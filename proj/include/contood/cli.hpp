#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "contood/continual.hpp"
#include "contood/dataset.hpp"
#include "contood/reporting.hpp"
#include "contood/threshold_search.hpp"

namespace contood {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitCheckFailed = 3,
};

// Environment variable that overrides data_dir when the flag is absent.
inline constexpr const char* kDataDirEnv = "CONTOOD_DATA_DIR";

struct RunConfig {
  Source dataset = Source::synthetic;
  std::filesystem::path data_dir;
  int n_id_classes = 5;
  std::vector<int> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  SearchMetric metric = SearchMetric::g_mean;
  std::string method = "all";  // fixed | cheating | dynamic | all
  double rho = 0.5;
  double fixed_eta = 1.0;
  EtaAveraging averaging = EtaAveraging::pairwise;

  int epochs = 0;  // 0: dataset default (10 mnist, 20 fmnist, 35 cifar10, 10 synthetic)
  int batch_size = 32;
  double learning_rate = 1e-2;
  double lambda_group_sparsity = 1e-4;
  double lambda_soft_freeze = 100.0;
  std::vector<int> hidden{400, 128};
  std::size_t max_train_per_class = 0;  // 0: all

  // synthetic only
  int synthetic_classes = 10;
  int synthetic_dim = 20;
  double synthetic_separation = 10.0;
  double synthetic_std = 0.5;
  int synthetic_samples_per_class = 100;

  std::filesystem::path output = "reports.csv";
  ReportFormat format = ReportFormat::csv;
  std::optional<std::filesystem::path> aggregate_output;
  std::optional<std::filesystem::path> checkpoint_dir;

  void validate_data() const;  // dataset fields only
  void validate() const;
};

int default_epochs(Source source);

// Full train/test splits for one seed (synthetic data depends on the seed).
std::pair<LabeledDataset, LabeledDataset> load_dataset(const RunConfig& cfg, int seed);

ProtocolConfig protocol_config(const RunConfig& cfg, int seed);

// All reports for one seed, ordered by (stage, method).
ProtocolResult run_seed(const RunConfig& cfg, const LabeledDataset& train,
                        const LabeledDataset& test, int seed);

int cmd_run(const RunConfig& cfg, std::ostream& out, std::ostream& err);

// Trains the LOOCV folds of every seed and prints eta0 per seed.
int cmd_loocv(const RunConfig& cfg, std::ostream& out, std::ostream& err);

struct EvalConfig {
  RunConfig run;  // dataset, data_dir, max_train_per_class, synthetic shape
  std::filesystem::path checkpoint;
  double eta = 1.0;
  int seed = 0;  // synthetic data seed and subsampling seed
};

// Re-scores a checkpoint: stats from the training data of its classes, ID
// accuracy on their test data, OOD accuracy on the test data of all others.
int cmd_eval(const EvalConfig& cfg, std::ostream& out, std::ostream& err);

using SearchFn = std::function<SearchResult(const ScoreTable&, const ScoreTable&,
                                            const ClassStats&, SearchMetric)>;

struct SearchCheckConfig {
  int cases = 100;
  std::uint64_t seed = 0;
  std::size_t max_rows = 200;
  int max_classes = 6;
  std::size_t grid_points = 100000;
  double tolerance = 1e-12;
  std::filesystem::path dump = "searchcheck_failure.txt";
};

// Every case is checked under both metrics. The first mismatch is dumped to
// cfg.dump and yields kExitCheckFailed.
int cmd_searchcheck(const SearchCheckConfig& cfg, std::ostream& out, std::ostream& err,
                    const SearchFn& search = cheat_search);

struct GradCheckConfig {
  int nets = 10;
  std::uint64_t seed = 0;
  int input_dim = 6;
  std::vector<int> hidden{5, 4};
  int n_classes = 3;
  int batch = 8;
  double lambda_group_sparsity = 1e-2;
  double lambda_soft_freeze = 1e-1;
  double tolerance = 1e-4;
};

int cmd_gradcheck(const GradCheckConfig& cfg, std::ostream& out, std::ostream& err);

// Parses argv, dispatches to a subcommand and maps errors to exit codes.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace contood
