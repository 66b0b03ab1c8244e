#include "contood/continual.hpp"

#include <numeric>

#include "contood/error.hpp"
#include "contood/rng.hpp"

namespace contood {

namespace {

TrainConfig seeded(const TrainConfig& base, std::uint64_t seed) {
  TrainConfig cfg = base;
  cfg.seed = seed;
  return cfg;
}

// Concatenates per-class datasets, giving part i the label i.
LabeledDataset stack_classes(std::span<const LabeledDataset> parts) {
  std::vector<LabeledDataset> relabeled;
  relabeled.reserve(parts.size());
  const int n = static_cast<int>(parts.size());
  for (int i = 0; i < n; ++i) relabeled.push_back(relabel_all(parts[i], i, n));
  return concat(relabeled);
}

NetworkState train_fresh(const LabeledDataset& train_set, int n_classes,
                         const ProtocolConfig& cfg, std::uint64_t seed) {
  NetworkState net = make_network(train_set.dim(), cfg.hidden_sizes, n_classes, seed);
  return train(std::move(net), train_set, seeded(cfg.train, seed));
}

double fold_eta(const ContinualState& state, double eta_new, EtaAveraging averaging) {
  if (averaging == EtaAveraging::pairwise) return 0.5 * (state.policy.eta + eta_new);
  double sum = eta_new;
  for (const auto& record : state.eta_history) sum += record.eta_estimate;
  return sum / static_cast<double>(state.eta_history.size() + 1);
}

}  // namespace

void ProtocolConfig::validate() const {
  train.validate();
  if (batch_size < 1) throw ValueError("detection batch_size must be >= 1");
  if (!(ood_batch_fraction > 0.0 && ood_batch_fraction <= 1.0)) {
    throw ValueError("rho must lie in (0, 1]");
  }
  if (hidden_sizes.empty()) throw ValueError("network needs at least one hidden layer");
}

std::vector<LabeledDataset> split_by_class(const LabeledDataset& ds) {
  std::vector<LabeledDataset> parts;
  for (int c = 0; c < ds.n_classes(); ++c) {
    parts.emplace_back(ds.dim(), ds.n_classes(), ds.split(), ds.source());
  }
  for (std::size_t i = 0; i < ds.size(); ++i) parts[ds.label(i)].add(ds.sample(i), ds.label(i));
  return parts;
}

LoocvResult loocv_eta(std::span<const LabeledDataset> per_class, const ProtocolConfig& cfg) {
  cfg.validate();
  const int n_classes = static_cast<int>(per_class.size());
  if (n_classes < 3) {
    throw ValueError("LOOCV needs at least 3 ID classes, got " + std::to_string(n_classes));
  }

  LoocvResult result;
  for (int left_out = 0; left_out < n_classes; ++left_out) {
    try {
      std::vector<LabeledDataset> kept;
      for (int c = 0; c < n_classes; ++c) {
        if (c != left_out) kept.push_back(per_class[c]);
      }
      const LabeledDataset train_set = stack_classes(kept);
      const auto seed = derive_seed(cfg.seed, SeedStream::loocv, static_cast<std::uint64_t>(left_out));
      const NetworkState net = train_fresh(train_set, n_classes - 1, cfg, seed);

      const ScoreTable id_table = build_score_table(net, train_set, false);
      const ScoreTable ood_table = build_score_table(net, per_class[left_out], true);
      const ClassStats stats = fit_class_stats(id_table);
      const SearchResult search = cheat_search(id_table, ood_table, stats, cfg.metric);
      result.per_class_etas.push_back(search.eta_star);
      result.searches.push_back(search);
    } catch (Error& e) {
      e.add_context("LOOCV fold leaving out class " + std::to_string(left_out));
      throw;
    }
  }
  result.eta0 = std::accumulate(result.per_class_etas.begin(), result.per_class_etas.end(), 0.0) /
                static_cast<double>(n_classes);
  return result;
}

ContinualState initial_state(std::span<const LabeledDataset> per_class,
                             std::span<const int> class_ids, const ProtocolConfig& cfg,
                             double eta) {
  cfg.validate();
  if (per_class.empty()) throw ValueError("no ID classes");
  if (class_ids.size() != per_class.size()) throw ValueError("one class id per ID class required");

  ContinualState state;
  const LabeledDataset train_set = stack_classes(per_class);
  state.net = train_fresh(train_set, static_cast<int>(per_class.size()), cfg,
                          derive_seed(cfg.seed, SeedStream::network_init));
  state.known_classes.assign(class_ids.begin(), class_ids.end());
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    state.stored_train.push_back(relabel_all(per_class[c], static_cast<int>(c),
                                             static_cast<int>(per_class.size())));
  }
  state.policy.eta = eta;
  state.policy.stats = fit_class_stats(build_score_table(state.net, train_set, false));
  state.eta_history.push_back({0, eta, eta});
  return state;
}

BatchVerdict batch_verdict(double flagged_fraction, double rho) {
  return {flagged_fraction >= rho, flagged_fraction};
}

BatchVerdict detect_batch(const ContinualState& state, const LabeledDataset& batch,
                          const ProtocolConfig& cfg) {
  if (batch.empty()) throw ValueError("detection batch is empty");
  const Matrix scores = score_dataset(state.net, batch);
  std::size_t flagged = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const auto row = scores.row(i);
    if (!decide(state.policy, {row.data(), static_cast<std::size_t>(row.size())}).in_distribution) {
      ++flagged;
    }
  }
  return batch_verdict(static_cast<double>(flagged) / static_cast<double>(batch.size()),
                       cfg.ood_batch_fraction);
}

SearchResult lookahead_search(const ContinualState& state, const LabeledDataset& ood_train,
                              SearchMetric metric) {
  const ScoreTable id_table = build_score_table(state.net, concat(state.stored_train), false);
  const ScoreTable ood_table = build_score_table(state.net, ood_train, true);
  return cheat_search(id_table, ood_table, state.policy.stats, metric);
}

void recompute_stats(ContinualState& state) {
  const ScoreTable table = build_score_table(state.net, concat(state.stored_train), false);
  std::vector<int> fell_back;
  state.policy.stats = fit_class_stats(table, state.policy.stats, fell_back);
  for (int c : fell_back) {
    state.warnings.push_back("class " + std::to_string(state.known_classes[c]) +
                             " has < 2 correctly classified stored points; keeping previous stats");
  }
}

ContinualState on_detection(ContinualState state, const LabeledDataset& ood_train,
                            int original_class_id, const ProtocolConfig& cfg, bool update_eta,
                            const SearchResult* precomputed) {
  cfg.validate();
  if (ood_train.empty()) throw ValueError("novel class training set is empty");
  const int new_label = state.net.n_classes();

  double eta_new = state.policy.eta;
  if (update_eta) {
    eta_new = precomputed ? precomputed->eta_star : lookahead_search(state, ood_train, cfg.metric).eta_star;
    state.policy.eta = fold_eta(state, eta_new, cfg.averaging);
  }

  const LabeledDataset labeled = relabel_all(ood_train, new_label, new_label + 1);
  const auto seed = derive_seed(cfg.seed, SeedStream::accommodation, static_cast<std::uint64_t>(new_label));
  state.net = accommodate_class(state.net, labeled, seeded(cfg.train, seed));
  state.known_classes.push_back(original_class_id);
  state.stored_train.push_back(labeled);

  recompute_stats(state);
  state.eta_history.push_back({static_cast<int>(state.eta_history.size()), eta_new, state.policy.eta});
  return state;
}

// ---------------------------------------------------------------------------

ProtocolResult run_protocol(const LabeledDataset& id_train, const LabeledDataset& id_test,
                            std::span<const NovelClass> stream, const ProtocolConfig& cfg,
                            const ProtocolOptions& options) {
  cfg.validate();
  if (!options.dynamic && !options.cheating && !options.fixed) {
    throw ValueError("no method selected");
  }
  const int n_id = id_train.n_classes();
  const auto seed = static_cast<int>(cfg.seed);
  const auto per_class = split_by_class(id_train);
  std::vector<int> class_ids = options.id_class_ids;
  if (class_ids.empty()) {
    class_ids.resize(static_cast<std::size_t>(n_id));
    std::iota(class_ids.begin(), class_ids.end(), 0);
  }

  ProtocolResult result;
  if (options.dynamic) result.loocv = loocv_eta(per_class, cfg);
  const double start_eta = options.dynamic ? result.loocv.eta0 : options.fixed_eta;
  ContinualState state = initial_state(per_class, class_ids, cfg, start_eta);

  auto known_test = split_by_class(id_test);
  auto evaluate_all = [&](int stage, const ScoreTable& id_table, const ScoreTable& ood_table,
                          const SearchResult* search) {
    auto add = [&](Method method, double eta) {
      const ThresholdPolicy policy{eta, state.policy.stats};
      const auto acc = evaluate_tables(policy, id_table, ood_table);
      result.reports.push_back(make_stage_report(seed, stage, state.net.n_classes(), method,
                                                 acc.acc_id, acc.acc_ood, eta));
    };
    if (options.fixed) add(Method::fixed_shels, options.fixed_eta);
    if (options.cheating && search) add(Method::cheating, search->eta_star);
    if (options.dynamic) add(Method::dynamic, state.policy.eta);
  };

  if (stream.empty()) {
    const ScoreTable id_table = build_score_table(state.net, concat(known_test), false);
    evaluate_all(0, id_table, ScoreTable{state.net.n_classes(), {}}, nullptr);
  }

  for (std::size_t k = 0; k < stream.size(); ++k) {
    const auto stage = static_cast<int>(k);
    const NovelClass& novel = stream[k];
    try {
      const ScoreTable id_table = build_score_table(state.net, concat(known_test), false);
      const ScoreTable ood_table = build_score_table(state.net, novel.train, true);

      SearchResult search;
      const bool need_search = options.dynamic || options.cheating;
      if (need_search) search = lookahead_search(state, novel.train, cfg.metric);
      evaluate_all(stage, id_table, ood_table, need_search ? &search : nullptr);

      result.detections.push_back(detect_batch(state, take_first(novel.train, static_cast<std::size_t>(cfg.batch_size)), cfg));
      state = on_detection(std::move(state), novel.train, novel.class_id, cfg, options.dynamic,
                           need_search ? &search : nullptr);
      known_test.push_back(relabel_all(novel.test, state.net.n_classes() - 1, state.net.n_classes()));
      if (options.on_stage) options.on_stage(stage, state);
    } catch (Error& e) {
      e.add_context("stage " + std::to_string(stage) + " (novel class " +
                    std::to_string(novel.class_id) + ")");
      throw;
    }
  }

  sort_reports(result.reports);
  result.eta_history = state.eta_history;
  result.warnings = state.warnings;
  return result;
}

ProtocolResult fixed_eta_baseline(const LabeledDataset& id_train, const LabeledDataset& id_test,
                                  std::span<const NovelClass> stream, const ProtocolConfig& cfg,
                                  double eta) {
  ProtocolOptions options;
  options.dynamic = false;
  options.cheating = false;
  options.fixed = true;
  options.fixed_eta = eta;
  return run_protocol(id_train, id_test, stream, cfg, options);
}

}  // namespace contood
