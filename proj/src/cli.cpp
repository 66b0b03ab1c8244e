#include "contood/cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"

#include "contood/error.hpp"
#include "contood/network.hpp"
#include "contood/oracle.hpp"
#include "contood/rng.hpp"

namespace contood {

int default_epochs(Source source) {
  switch (source) {
    case Source::mnist: return 10;
    case Source::fmnist: return 20;
    case Source::cifar10: return 35;
    case Source::synthetic: return 10;
  }
  return 10;
}

void RunConfig::validate_data() const {
  if (dataset != Source::synthetic && data_dir.empty()) {
    throw ValueError("data_dir is required for dataset " + std::string(to_string(dataset)) +
                     " (--data-dir or " + kDataDirEnv + ")");
  }
  if (dataset == Source::synthetic && synthetic_dim < synthetic_classes) {
    throw ValueError("synthetic_dim must be >= synthetic_classes");
  }
}

void RunConfig::validate() const {
  validate_data();
  if (seeds.empty()) throw ValueError("seeds must not be empty");
  if (method != "fixed" && method != "cheating" && method != "dynamic" && method != "all") {
    throw ValueError("method must be one of fixed, cheating, dynamic, all (got '" + method + "')");
  }
  const bool needs_loocv = method == "dynamic" || method == "all";
  if (needs_loocv && n_id_classes < 3) {
    throw ValueError("n_id_classes must be >= 3 for LOOCV (got " + std::to_string(n_id_classes) + ")");
  }
  if (n_id_classes < 2) throw ValueError("n_id_classes must be >= 2");
  if (epochs < 0) throw ValueError("epochs must be >= 0");
  if (hidden.empty() || std::any_of(hidden.begin(), hidden.end(), [](int h) { return h < 1; })) {
    throw ValueError("hidden must list positive layer widths");
  }
  if (dataset == Source::synthetic && synthetic_classes <= n_id_classes) {
    throw ValueError("synthetic_classes must exceed n_id_classes");
  }
  protocol_config(*this, 0).validate();
}

ProtocolConfig protocol_config(const RunConfig& cfg, int seed) {
  ProtocolConfig p;
  p.metric = cfg.metric;
  p.batch_size = cfg.batch_size;
  p.ood_batch_fraction = cfg.rho;
  p.hidden_sizes = cfg.hidden;
  p.averaging = cfg.averaging;
  p.seed = static_cast<std::uint64_t>(seed);
  p.train.epochs = cfg.epochs > 0 ? cfg.epochs : default_epochs(cfg.dataset);
  p.train.batch_size = cfg.batch_size;
  p.train.learning_rate = cfg.learning_rate;
  p.train.lambda_group_sparsity = cfg.lambda_group_sparsity;
  p.train.lambda_soft_freeze = cfg.lambda_soft_freeze;
  return p;
}

std::pair<LabeledDataset, LabeledDataset> load_dataset(const RunConfig& cfg, int seed) {
  switch (cfg.dataset) {
    case Source::mnist:
    case Source::fmnist:
      return {load_mnist_dir(cfg.data_dir, Split::train, cfg.dataset),
              load_mnist_dir(cfg.data_dir, Split::test, cfg.dataset)};
    case Source::cifar10:
      return {load_cifar10_dir(cfg.data_dir, Split::train),
              load_cifar10_dir(cfg.data_dir, Split::test)};
    case Source::synthetic: {
      SyntheticSpec spec;
      spec.n_classes = cfg.synthetic_classes;
      spec.dim = cfg.synthetic_dim;
      spec.cluster_means = axis_cluster_means(cfg.synthetic_classes, cfg.synthetic_dim,
                                              cfg.synthetic_separation);
      spec.cluster_std = cfg.synthetic_std;
      spec.samples_per_class = cfg.synthetic_samples_per_class;
      spec.seed = derive_seed(static_cast<std::uint64_t>(seed), SeedStream::synthetic);
      return make_synthetic(spec);
    }
  }
  throw ValueError("unknown dataset");
}

namespace {

ProtocolOptions method_options(const RunConfig& cfg) {
  ProtocolOptions o;
  o.fixed = cfg.method == "fixed" || cfg.method == "all";
  o.cheating = cfg.method == "cheating" || cfg.method == "all";
  o.dynamic = cfg.method == "dynamic" || cfg.method == "all";
  o.fixed_eta = cfg.fixed_eta;
  return o;
}

struct SeedData {
  LabeledDataset id_train;
  LabeledDataset id_test;
  std::vector<int> id_classes;
  std::vector<NovelClass> stream;
};

SeedData prepare_seed(const RunConfig& cfg, const LabeledDataset& train,
                      const LabeledDataset& test, int seed) {
  const auto useed = static_cast<std::uint64_t>(seed);
  auto [id_classes, stream_classes] =
      choose_class_split(train.n_classes(), cfg.n_id_classes, derive_seed(useed, SeedStream::class_split));
  LabeledDataset train_view = train;
  if (cfg.max_train_per_class > 0) train_view = subsample_per_class(train, cfg.max_train_per_class, useed);

  SeedData d{subset_classes(train_view, id_classes, true), subset_classes(test, id_classes, true),
             id_classes, {}};
  for (int c : stream_classes) {
    const int one[] = {c};
    d.stream.push_back({c, subset_classes(train_view, one, true), subset_classes(test, one, true)});
  }
  return d;
}

void print_warnings(std::ostream& err, int seed, const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) err << "warning (seed " << seed << "): " << w << '\n';
}

}  // namespace

ProtocolResult run_seed(const RunConfig& cfg, const LabeledDataset& train,
                        const LabeledDataset& test, int seed) {
  const SeedData d = prepare_seed(cfg, train, test, seed);
  ProtocolOptions options = method_options(cfg);
  options.id_class_ids = d.id_classes;
  if (cfg.checkpoint_dir) {
    std::filesystem::create_directories(*cfg.checkpoint_dir);
    options.on_stage = [&](int stage, const ContinualState& state) {
      save_checkpoint(*cfg.checkpoint_dir / ("seed" + std::to_string(seed) + "_stage" +
                                             std::to_string(stage) + ".ckpt"),
                      {state.net, state.known_classes});
    };
  }
  return run_protocol(d.id_train, d.id_test, d.stream, protocol_config(cfg, seed), options);
}

int cmd_run(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  std::vector<StageReport> reports;
  std::optional<std::pair<LabeledDataset, LabeledDataset>> shared;
  if (cfg.dataset != Source::synthetic) shared = load_dataset(cfg, 0);

  for (int seed : cfg.seeds) {
    try {
      const auto data = shared ? *shared : load_dataset(cfg, seed);
      const ProtocolResult result = run_seed(cfg, data.first, data.second, seed);
      err << "seed " << seed << ": " << result.reports.size() << " rows";
      if (!result.loocv.per_class_etas.empty()) err << ", eta0 " << result.loocv.eta0;
      err << '\n';
      print_warnings(err, seed, result.warnings);
      reports.insert(reports.end(), result.reports.begin(), result.reports.end());
    } catch (Error& e) {
      e.add_context("seed " + std::to_string(seed));
      throw;
    }
  }

  sort_reports(reports);
  emit(reports, cfg.output, cfg.format);
  out << "wrote " << reports.size() << " rows to " << cfg.output.string() << '\n';
  if (cfg.aggregate_output) {
    write_aggregate_csv(*cfg.aggregate_output, aggregate(reports));
    out << "wrote aggregate to " << cfg.aggregate_output->string() << '\n';
  }
  return kExitOk;
}

int cmd_loocv(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  std::optional<std::pair<LabeledDataset, LabeledDataset>> shared;
  if (cfg.dataset != Source::synthetic) shared = load_dataset(cfg, 0);
  out << "seed,eta0,per_class\n" << std::setprecision(17);
  for (int seed : cfg.seeds) {
    const auto data = shared ? *shared : load_dataset(cfg, seed);
    const SeedData d = prepare_seed(cfg, data.first, data.second, seed);
    const LoocvResult r = loocv_eta(split_by_class(d.id_train), protocol_config(cfg, seed));
    out << seed << ',' << r.eta0 << ',';
    for (std::size_t i = 0; i < r.per_class_etas.size(); ++i) {
      out << (i ? ";" : "") << r.per_class_etas[i];
    }
    out << '\n';
  }
  err << "loocv done for " << cfg.seeds.size() << " seed(s)\n";
  return kExitOk;
}

int cmd_eval(const EvalConfig& cfg, std::ostream& out, std::ostream& err) {
  const Checkpoint ckpt = load_checkpoint(cfg.checkpoint);
  auto [train, test] = load_dataset(cfg.run, cfg.seed);
  if (cfg.run.max_train_per_class > 0) {
    train = subsample_per_class(train, cfg.run.max_train_per_class, static_cast<std::uint64_t>(cfg.seed));
  }
  if (static_cast<int>(ckpt.class_ids.size()) != ckpt.net.n_classes()) {
    throw ConsistencyError("checkpoint lists " + std::to_string(ckpt.class_ids.size()) +
                           " class ids for " + std::to_string(ckpt.net.n_classes()) + " head columns");
  }
  std::vector<int> others;
  for (int c = 0; c < test.n_classes(); ++c) {
    if (std::find(ckpt.class_ids.begin(), ckpt.class_ids.end(), c) == ckpt.class_ids.end() &&
        test.count(c) > 0) {
      others.push_back(c);
    }
  }

  // A class the network no longer gets right has no statistics; it then
  // accepts nothing.
  const int n = ckpt.net.n_classes();
  ClassStats unusable{std::vector<double>(n, std::numeric_limits<double>::infinity()), std::vector<double>(n, 1.0),
                      std::vector<int>(n, 0)};
  std::vector<int> fell_back;
  const ThresholdPolicy policy{
      cfg.eta, fit_class_stats(build_score_table(ckpt.net, subset_classes(train, ckpt.class_ids, true), false),
                               unusable, fell_back)};
  for (int k : fell_back) {
    err << "warning: class " << ckpt.class_ids[static_cast<std::size_t>(k)]
        << " has fewer than 2 correctly classified training points; it accepts nothing\n";
  }
  const LabeledDataset ood = others.empty() ? LabeledDataset(test.dim(), test.n_classes(), Split::test, test.source())
                                            : subset_classes(test, others, false);
  const StageAccuracy acc =
      evaluate_stage(ckpt.net, policy, subset_classes(test, ckpt.class_ids, true), ood);
  out << "n_classes,eta,acc_id,acc_ood,total,gmean\n" << std::fixed << std::setprecision(6)
      << ckpt.net.n_classes() << ',' << cfg.eta << ',' << acc.acc_id << ',' << acc.acc_ood << ','
      << metric_value(SearchMetric::total_accuracy, acc.acc_id, acc.acc_ood) << ','
      << metric_value(SearchMetric::g_mean, acc.acc_id, acc.acc_ood) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

namespace {

void dump_case(const std::filesystem::path& path, const SearchCase& c, SearchMetric metric,
               const SearchResult& got, const GridOptimum& want) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << std::setprecision(17);
  f << "# metric " << to_string(metric) << "\n# search eta " << got.eta_star << " value "
    << got.metric_value << "\n# grid eta " << want.eta << " value " << want.metric_value << '\n';
  f << "# class,mu,sigma\n";
  for (int k = 0; k < c.stats.n_classes(); ++k) {
    f << "# " << k << ',' << c.stats.mu[k] << ',' << c.stats.sigma[k] << '\n';
  }
  f << "# id table\n";
  write_score_table_csv(f, c.id_table);
  f << "# ood table\n";
  write_score_table_csv(f, c.ood_table);
}

}  // namespace

int cmd_searchcheck(const SearchCheckConfig& cfg, std::ostream& out, std::ostream& err,
                    const SearchFn& search) {
  Rng rng(derive_seed(cfg.seed, SeedStream::search_check));
  double worst = 0.0;
  for (int i = 0; i < cfg.cases; ++i) {
    const SearchCase c = random_search_case(rng, cfg.max_rows, cfg.max_classes);
    const NegZScores z = collect_neg_z(c.id_table, c.ood_table, c.stats);
    for (SearchMetric metric : {SearchMetric::total_accuracy, SearchMetric::g_mean}) {
      const SearchResult got = search(c.id_table, c.ood_table, c.stats, metric);
      const GridOptimum want = dense_grid_search(z.id, z.ood, metric, cfg.grid_points);
      const double gap = std::abs(got.metric_value - want.metric_value);
      worst = std::max(worst, gap);
      if (!(gap <= cfg.tolerance)) {
        dump_case(cfg.dump, c, metric, got, want);
        err << "case " << i << " (" << to_string(metric) << "): search " << std::setprecision(17)
            << got.metric_value << " vs grid " << want.metric_value << "; table written to "
            << cfg.dump.string() << '\n';
        return kExitCheckFailed;
      }
    }
  }
  out << "searchcheck: " << cfg.cases << " cases x 2 metrics passed, max gap " << worst << '\n';
  return kExitOk;
}

int cmd_gradcheck(const GradCheckConfig& cfg, std::ostream& out, std::ostream& err) {
  if (cfg.nets < 1 || cfg.input_dim < 1 || cfg.n_classes < 2 || cfg.batch < 1 || cfg.hidden.empty()) {
    throw ValueError("gradcheck needs nets, input_dim, batch >= 1 and n_classes >= 2");
  }
  TrainConfig tc;
  tc.lambda_group_sparsity = cfg.lambda_group_sparsity;
  tc.lambda_soft_freeze = cfg.lambda_soft_freeze;

  double worst = 0.0;
  for (int i = 0; i < cfg.nets; ++i) {
    const auto seed = derive_seed(cfg.seed, SeedStream::grad_check, static_cast<std::uint64_t>(i));
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<int> label(0, cfg.n_classes - 1);

    NetworkState net = make_network(static_cast<std::size_t>(cfg.input_dim), cfg.hidden, cfg.n_classes, seed);
    // Fresh nets have zero biases, which can park a pre-activation exactly on
    // the ReLU kink when a whole layer below is inactive.
    for (auto& layer : net.hidden) {
      for (auto& b : layer.bias) b = 0.1 * normal(rng);
    }
    // Alternate between a full-width reference and one missing the last head
    // column, as during accommodation.
    const int ref_classes = i % 2 == 0 ? cfg.n_classes : cfg.n_classes - 1;
    const NetworkState ref = make_network(static_cast<std::size_t>(cfg.input_dim), cfg.hidden, ref_classes, seed + 1);

    Matrix x(cfg.batch, cfg.input_dim);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      for (Eigen::Index c = 0; c < x.cols(); ++c) x(r, c) = normal(rng);
    }
    std::vector<int> labels(static_cast<std::size_t>(cfg.batch));
    for (auto& l : labels) l = label(rng);

    const auto result = gradient_check(net, x, labels, tc, &ref);
    worst = std::max(worst, result.max_relative_error);
    if (!(result.max_relative_error < cfg.tolerance)) {
      err << "net " << i << ": relative error " << result.max_relative_error << " in "
          << result.worst_block << '\n';
      return kExitCheckFailed;
    }
  }
  out << "gradcheck: " << cfg.nets << " nets passed, max relative error " << worst << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

namespace {

// Keys outside any [section] belong to the selected subcommand, so a file
// can say `epochs=5` rather than `run.epochs=5`.
class SubcommandConfig : public CLI::ConfigINI {
 public:
  explicit SubcommandConfig(const CLI::App& app) : app_(app) {}

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    auto items = CLI::ConfigINI::from_config(input);
    const auto selected = app_.get_subcommands();
    if (selected.empty()) return items;
    for (auto& item : items) {
      if (item.parents.empty() && item.name != "--" && item.name != "++") {
        item.parents = {selected.front()->get_name()};
      }
    }
    return items;
  }

 private:
  const CLI::App& app_;
};

template <typename Enum>
CLI::Option* add_enum(CLI::App& app, const std::string& flag, Enum& target,
                      Enum (*parse)(std::string_view), const std::string& help) {
  return app
      .add_option_function<std::string>(
          flag, [&target, parse](const std::string& v) { target = parse(v); }, help)
      ->type_name("TEXT");
}

void add_data_options(CLI::App& app, RunConfig& cfg) {
  add_enum(app, "--dataset", cfg.dataset, parse_source, "mnist | fmnist | cifar10 | synthetic");
  app.add_option("--data-dir", cfg.data_dir, "directory holding the dataset files")->envname(kDataDirEnv);
  app.add_option("--max-train-per-class", cfg.max_train_per_class, "subsample training data (0: all)");
  app.add_option("--synthetic-classes", cfg.synthetic_classes);
  app.add_option("--synthetic-dim", cfg.synthetic_dim);
  app.add_option("--synthetic-separation", cfg.synthetic_separation, "distance between cluster means");
  app.add_option("--synthetic-std", cfg.synthetic_std);
  app.add_option("--synthetic-samples-per-class", cfg.synthetic_samples_per_class);
}

void add_protocol_options(CLI::App& app, RunConfig& cfg) {
  add_data_options(app, cfg);
  app.add_option("--n-id-classes", cfg.n_id_classes, "classes known at the start");
  app.add_option("--seeds", cfg.seeds, "comma-separated seeds")->delimiter(',');
  add_enum(app, "--metric", cfg.metric, parse_metric, "total | gmean");
  app.add_option("--rho", cfg.rho, "fraction of a batch that must be flagged");
  app.add_option("--epochs", cfg.epochs, "0: dataset default");
  app.add_option("--batch-size", cfg.batch_size);
  app.add_option("--lr", cfg.learning_rate);
  app.add_option("--lambda-gs", cfg.lambda_group_sparsity, "group sparsity weight");
  app.add_option("--lambda-sf", cfg.lambda_soft_freeze, "soft-freeze weight");
  app.add_option("--hidden", cfg.hidden, "comma-separated hidden widths")->delimiter(',');
  app.add_option_function<std::string>(
      "--averaging",
      [&cfg](const std::string& v) {
        if (v == "pairwise") {
          cfg.averaging = EtaAveraging::pairwise;
        } else if (v == "cumulative") {
          cfg.averaging = EtaAveraging::cumulative;
        } else {
          throw CLI::ValidationError("--averaging", "must be pairwise or cumulative");
        }
      },
      "pairwise | cumulative");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Continual OOD detection with a dynamic threshold"};
  app.require_subcommand(1);
  app.fallthrough();
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_config("--config", "", "key=value config file; flags take precedence");
  app.config_formatter(std::make_shared<SubcommandConfig>(app));

  RunConfig run_cfg;
  auto* run = app.add_subcommand("run", "run the continual protocol over seeds");
  add_protocol_options(*run, run_cfg);
  run->add_option("--method", run_cfg.method, "fixed | cheating | dynamic | all");
  run->add_option("--fixed-eta", run_cfg.fixed_eta);
  run->add_option("--output", run_cfg.output);
  add_enum(*run, "--format", run_cfg.format, parse_format, "csv | json");
  run->add_option("--aggregate", run_cfg.aggregate_output, "also write per-stage means and p-values");
  run->add_option("--checkpoint-dir", run_cfg.checkpoint_dir);

  RunConfig loocv_cfg;
  loocv_cfg.method = "dynamic";
  auto* loocv = app.add_subcommand("loocv", "estimate eta0 only");
  add_protocol_options(*loocv, loocv_cfg);

  EvalConfig eval_cfg;
  auto* eval = app.add_subcommand("eval", "re-score a checkpoint");
  add_data_options(*eval, eval_cfg.run);
  eval->add_option("--checkpoint", eval_cfg.checkpoint)->required();
  eval->add_option("--eta", eval_cfg.eta);
  eval->add_option("--seed", eval_cfg.seed);

  SearchCheckConfig search_cfg;
  auto* search = app.add_subcommand("searchcheck", "compare the threshold search with a dense grid");
  search->add_option("--cases", search_cfg.cases);
  search->add_option("--seed", search_cfg.seed);
  search->add_option("--max-rows", search_cfg.max_rows);
  search->add_option("--max-classes", search_cfg.max_classes);
  search->add_option("--grid-points", search_cfg.grid_points);
  search->add_option("--tolerance", search_cfg.tolerance);
  search->add_option("--dump", search_cfg.dump, "where a failing table is written");

  GradCheckConfig grad_cfg;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the loss gradient");
  grad->add_option("--nets", grad_cfg.nets);
  grad->add_option("--seed", grad_cfg.seed);
  grad->add_option("--input-dim", grad_cfg.input_dim);
  grad->add_option("--hidden", grad_cfg.hidden)->delimiter(',');
  grad->add_option("--classes", grad_cfg.n_classes);
  grad->add_option("--batch", grad_cfg.batch);
  grad->add_option("--lambda-gs", grad_cfg.lambda_group_sparsity);
  grad->add_option("--lambda-sf", grad_cfg.lambda_soft_freeze);
  grad->add_option("--tolerance", grad_cfg.tolerance);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    // raised by the enum parsers
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*run) run_cfg.validate();
    if (*loocv) loocv_cfg.validate();
    if (*eval) eval_cfg.run.validate_data();
  } catch (const Error& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*run) return cmd_run(run_cfg, out, err);
    if (*loocv) return cmd_loocv(loocv_cfg, out, err);
    if (*eval) return cmd_eval(eval_cfg, out, err);
    if (*search) return cmd_searchcheck(search_cfg, out, err);
    if (*grad) return cmd_gradcheck(grad_cfg, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace contood
