#include "contood/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "contood/error.hpp"

namespace contood {

GridOptimum dense_grid_search(std::span<const double> id_z, std::span<const double> ood_z,
                              SearchMetric metric, std::size_t points) {
  if (id_z.empty() || ood_z.empty() || points < 2) {
    throw ValueError("dense grid needs ID values, OOD values and >= 2 points");
  }
  std::vector<double> id(id_z.begin(), id_z.end());
  std::vector<double> ood(ood_z.begin(), ood_z.end());
  std::sort(id.begin(), id.end());
  std::sort(ood.begin(), ood.end());
  const double lo = std::min(id.front(), ood.front()) - 1.0;
  const double hi = std::max(id.back(), ood.back()) + 1.0;

  // Sweep eta upward; id_below counts z < eta, ood_at_or_below counts z <= eta.
  std::size_t id_below = 0;
  std::size_t ood_at_or_below = 0;
  GridOptimum best{lo, -1.0};
  for (std::size_t g = 0; g < points; ++g) {
    const double eta = lo + (hi - lo) * static_cast<double>(g) / static_cast<double>(points - 1);
    while (id_below < id.size() && id[id_below] < eta) ++id_below;
    while (ood_at_or_below < ood.size() && ood[ood_at_or_below] <= eta) ++ood_at_or_below;
    const double acc_id = static_cast<double>(id_below) / static_cast<double>(id.size());
    const double acc_ood =
        static_cast<double>(ood.size() - ood_at_or_below) / static_cast<double>(ood.size());
    const double value = metric == SearchMetric::g_mean ? std::sqrt(acc_id * acc_ood)
                                                        : 0.5 * (acc_id + acc_ood);
    if (value > best.metric_value) best = {eta, value};
  }
  return best;
}

SearchCase random_search_case(Rng& rng, std::size_t max_rows, int max_classes) {
  if (max_rows < 2 || max_classes < 2) throw ValueError("random case needs >= 2 rows and classes");
  std::uniform_int_distribution<int> class_count(2, max_classes);
  std::uniform_int_distribution<int> lattice(-64, 64);  // score = k / 64
  std::uniform_int_distribution<int> mean_lattice(0, 64);
  std::uniform_int_distribution<int> sigma_pick(0, 3);
  std::bernoulli_distribution make_correct(0.8);

  const int n_classes = class_count(rng);
  SearchCase out;
  out.stats.mu.resize(static_cast<std::size_t>(n_classes));
  out.stats.sigma.resize(static_cast<std::size_t>(n_classes));
  out.stats.n.assign(static_cast<std::size_t>(n_classes), 0);
  for (int c = 0; c < n_classes; ++c) {
    out.stats.mu[c] = mean_lattice(rng) / 64.0;
    out.stats.sigma[c] = std::ldexp(1.0, -1 - sigma_pick(rng));
  }

  const std::size_t n_id = std::uniform_int_distribution<std::size_t>(1, max_rows - 1)(rng);
  const std::size_t n_ood = std::uniform_int_distribution<std::size_t>(1, max_rows - n_id)(rng);
  std::uniform_int_distribution<int> label_pick(0, n_classes - 1);

  auto draw_scores = [&] {
    std::vector<double> s(static_cast<std::size_t>(n_classes));
    for (double& v : s) v = lattice(rng) / 64.0;
    return s;
  };

  out.id_table.n_classes = n_classes;
  out.ood_table.n_classes = n_classes;
  bool any_correct = false;
  for (std::size_t i = 0; i < n_id; ++i) {
    const int label = label_pick(rng);
    auto s = draw_scores();
    if (make_correct(rng) || (i + 1 == n_id && !any_correct)) {
      // Move the largest score onto the true class and clear ties below it.
      const auto top = std::max_element(s.begin(), s.end());
      std::iter_swap(top, s.begin() + label);
      for (int c = 0; c < label; ++c) {
        if (s[c] == s[label]) s[c] -= 1.0 / 64.0;
      }
    }
    out.id_table.rows.push_back(make_score_row(label, s));
    if (out.id_table.rows.back().correct) {
      any_correct = true;
      ++out.stats.n[label];
    }
  }
  for (std::size_t i = 0; i < n_ood; ++i) {
    out.ood_table.rows.push_back(make_score_row(kOodLabel, draw_scores()));
  }
  return out;
}

}  // namespace contood
