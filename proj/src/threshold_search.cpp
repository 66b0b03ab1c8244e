#include "contood/threshold_search.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "contood/error.hpp"

namespace contood {

std::string_view to_string(SearchMetric metric) {
  return metric == SearchMetric::g_mean ? "gmean" : "total";
}

SearchMetric parse_metric(std::string_view name) {
  if (name == "gmean" || name == "g_mean") return SearchMetric::g_mean;
  if (name == "total" || name == "total_accuracy") return SearchMetric::total_accuracy;
  throw ValueError("unknown metric '" + std::string(name) + "'");
}

double metric_value(SearchMetric metric, double acc_id, double acc_ood) {
  if (!(acc_id >= 0.0 && acc_id <= 1.0) || !(acc_ood >= 0.0 && acc_ood <= 1.0)) {
    throw ValueError("accuracies must lie in [0, 1]");
  }
  return metric == SearchMetric::g_mean ? std::sqrt(acc_id * acc_ood)
                                        : 0.5 * (acc_id + acc_ood);
}

std::vector<double> candidate_etas(std::span<const double> id_z,
                                   std::span<const double> ood_z) {
  std::vector<double> pooled(id_z.begin(), id_z.end());
  pooled.insert(pooled.end(), ood_z.begin(), ood_z.end());
  if (pooled.empty()) throw ValueError("no Z' values to search over");
  std::sort(pooled.begin(), pooled.end());
  pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());

  std::vector<double> candidates;
  candidates.reserve(pooled.size() + 1);
  candidates.push_back(pooled.front() - 1.0);
  for (std::size_t i = 0; i + 1 < pooled.size(); ++i) {
    candidates.push_back(pooled[i] + 0.5 * (pooled[i + 1] - pooled[i]));
  }
  candidates.push_back(pooled.back() + 1.0);
  // Adjacent doubles can share a midpoint.
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  return candidates;
}

SearchResult search_eta(std::span<const double> id_z, std::span<const double> ood_z,
                        SearchMetric metric) {
  if (id_z.empty()) throw ValueError("threshold search needs at least one ID value");
  if (ood_z.empty()) throw ValueError("threshold search needs at least one OOD value");

  std::vector<double> id_sorted(id_z.begin(), id_z.end());
  std::vector<double> ood_sorted(ood_z.begin(), ood_z.end());
  std::sort(id_sorted.begin(), id_sorted.end());
  std::sort(ood_sorted.begin(), ood_sorted.end());
  const auto n_id = static_cast<double>(id_sorted.size());
  const auto n_ood = static_cast<double>(ood_sorted.size());

  const auto candidates = candidate_etas(id_z, ood_z);
  SearchResult best;
  best.n_candidates = candidates.size();
  bool have_best = false;
  for (double eta : candidates) {
    const auto accepted = std::lower_bound(id_sorted.begin(), id_sorted.end(), eta) - id_sorted.begin();
    const auto detected = ood_sorted.end() - std::upper_bound(ood_sorted.begin(), ood_sorted.end(), eta);
    const double acc_id = static_cast<double>(accepted) / n_id;
    const double acc_ood = static_cast<double>(detected) / n_ood;
    const double value = metric_value(metric, acc_id, acc_ood);
    if (!have_best || value > best.metric_value) {
      best.eta_star = eta;
      best.metric_value = value;
      best.acc_id = acc_id;
      best.acc_ood = acc_ood;
      have_best = true;
    }
  }
  return best;
}

NegZScores collect_neg_z(const ScoreTable& id_table, const ScoreTable& ood_table,
                         const ClassStats& stats) {
  NegZScores z;
  for (const auto& row : id_table.rows) {
    if (row.correct) z.id.push_back(neg_z(stats, row.true_label, row.scores[row.true_label]));
  }
  z.ood.reserve(ood_table.size());
  for (const auto& row : ood_table.rows) {
    z.ood.push_back(neg_z(stats, row.argmax, row.scores[row.argmax]));
  }
  return z;
}

SearchResult cheat_search(const ScoreTable& id_table, const ScoreTable& ood_table,
                          const ClassStats& stats, SearchMetric metric) {
  if (id_table.n_classes != stats.n_classes() || ood_table.n_classes != stats.n_classes()) {
    throw ShapeError("score tables and class stats cover different class counts");
  }
  const auto z = collect_neg_z(id_table, ood_table, stats);
  if (z.id.empty()) throw InsufficientDataError("no correctly classified ID rows", kOodLabel);
  if (z.ood.empty()) throw ValueError("OOD score table is empty");
  return search_eta(z.id, z.ood, metric);
}

}  // namespace contood
