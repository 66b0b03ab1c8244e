#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "contood/error.hpp"
#include "contood/oracle.hpp"
#include "contood/threshold_search.hpp"

using namespace contood;

namespace {

// Single-class tables with mu = 0, sigma = 1, so Z' = -score.
struct Tables {
  ScoreTable id;
  ScoreTable ood;
  ClassStats stats;
};

Tables from_neg_z(const std::vector<double>& id_z, const std::vector<double>& ood_z) {
  Tables t;
  t.id.n_classes = 1;
  t.ood.n_classes = 1;
  t.stats.mu = {0.0};
  t.stats.sigma = {1.0};
  t.stats.n = {static_cast<int>(id_z.size())};
  for (double z : id_z) t.id.rows.push_back(make_score_row(0, std::vector<double>{-z}));
  for (double z : ood_z) t.ood.rows.push_back(make_score_row(kOodLabel, std::vector<double>{-z}));
  return t;
}

// Accuracy pair at eta straight from the decision rule.
std::pair<double, double> accuracies_at(const std::vector<double>& id_z, const std::vector<double>& ood_z,
                                        double eta) {
  const auto id_hits = std::count_if(id_z.begin(), id_z.end(), [&](double z) { return z < eta; });
  const auto ood_hits = std::count_if(ood_z.begin(), ood_z.end(), [&](double z) { return z > eta; });
  return {static_cast<double>(id_hits) / static_cast<double>(id_z.size()),
          static_cast<double>(ood_hits) / static_cast<double>(ood_z.size())};
}

}  // namespace

TEST_CASE("metric values") {
  CHECK(metric_value(SearchMetric::total_accuracy, 1.0, 0.0) == 0.5);
  CHECK(metric_value(SearchMetric::g_mean, 1.0, 0.0) == 0.0);
  CHECK(metric_value(SearchMetric::g_mean, 0.81, 0.49) == doctest::Approx(0.63).epsilon(1e-12));
  CHECK_THROWS_AS(metric_value(SearchMetric::g_mean, 1.1, 0.5), ValueError);
  CHECK_THROWS_AS(metric_value(SearchMetric::total_accuracy, 0.5, -0.1), ValueError);
  CHECK(parse_metric("gmean") == SearchMetric::g_mean);
  CHECK(parse_metric("total") == SearchMetric::total_accuracy);
  CHECK_THROWS_AS(parse_metric("f1"), ValueError);
}

TEST_CASE("candidate etas") {
  const std::vector<double> four{-1.2, 0.3, 0.9, 2.0};
  const auto c = candidate_etas(std::vector<double>{four[0], four[2]}, std::vector<double>{four[1], four[3]});
  const std::vector<double> want{-2.2, -0.45, 0.6, 1.45, 3.0};
  REQUIRE(c.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(c[i] == doctest::Approx(want[i]).epsilon(1e-15));

  CHECK(candidate_etas(std::vector<double>{0.0}, {}) == std::vector<double>{-1.0, 1.0});
  CHECK(candidate_etas(std::vector<double>{1.0, 1.0}, std::vector<double>{2.0}) ==
        std::vector<double>{0.0, 1.5, 3.0});
  CHECK_THROWS_AS(candidate_etas({}, {}), ValueError);
}

TEST_CASE("cheat search: worked examples") {
  SUBCASE("separable") {
    const auto t = from_neg_z({-1.2, 0.3}, {0.9, 2.0});
    const auto r = cheat_search(t.id, t.ood, t.stats, SearchMetric::g_mean);
    CHECK(r.eta_star == doctest::Approx(0.6));
    CHECK(r.metric_value == 1.0);
    CHECK(r.acc_id == 1.0);
    CHECK(r.acc_ood == 1.0);
    CHECK(r.n_candidates == 5);
  }
  SUBCASE("overlapping") {
    const auto t = from_neg_z({0.5, 1.5}, {1.0});
    const auto r = cheat_search(t.id, t.ood, t.stats, SearchMetric::g_mean);
    CHECK(r.eta_star == 0.75);
    CHECK(r.metric_value == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
    CHECK(r.acc_id == 0.5);
    CHECK(r.acc_ood == 1.0);
    CHECK(r.n_candidates == 4);
  }
  SUBCASE("ties go to the smallest eta") {
    const auto r = search_eta(std::vector<double>{0.0}, std::vector<double>{0.0}, SearchMetric::total_accuracy);
    CHECK(r.eta_star == -1.0);
    CHECK(r.metric_value == 0.5);
  }
  SUBCASE("all ID below all OOD reaches 1 between the groups") {
    const std::vector<double> id{-3.0, -2.5, -1.0, 0.0};
    const std::vector<double> ood{1.0, 4.0, 4.5};
    for (auto metric : {SearchMetric::g_mean, SearchMetric::total_accuracy}) {
      const auto r = search_eta(id, ood, metric);
      CHECK(r.metric_value == 1.0);
      CHECK(r.eta_star > 0.0);
      CHECK(r.eta_star < 1.0);
    }
  }
}

TEST_CASE("cheat search: scoring rules for rows") {
  // Two classes. ID rows are scored at their true class; a misclassified ID
  // row is left out; OOD rows are scored at their argmax class.
  ScoreTable id{2, {make_score_row(0, std::vector<double>{0.9, 0.1}),
                    make_score_row(1, std::vector<double>{0.2, 0.8}),
                    make_score_row(1, std::vector<double>{0.7, 0.3})}};
  ScoreTable ood{2, {make_score_row(kOodLabel, std::vector<double>{0.1, 0.4})}};
  ClassStats stats{{1.0, 1.0}, {0.5, 0.25}, {5, 5}};
  const NegZScores z = collect_neg_z(id, ood, stats);
  REQUIRE(z.id.size() == 2);
  CHECK(z.id[0] == doctest::Approx(0.2));
  CHECK(z.id[1] == doctest::Approx(0.8));
  REQUIRE(z.ood.size() == 1);
  CHECK(z.ood[0] == doctest::Approx(2.4));
}

TEST_CASE("cheat search: preconditions") {
  const auto t = from_neg_z({0.1}, {0.2});
  CHECK_THROWS_AS(cheat_search(t.id, ScoreTable{1, {}}, t.stats, SearchMetric::g_mean), ValueError);
  ScoreTable wrong_only{1, {make_score_row(0, std::vector<double>{0.5})}};
  wrong_only.rows[0].correct = false;
  CHECK_THROWS_AS(cheat_search(wrong_only, t.ood, t.stats, SearchMetric::g_mean), InsufficientDataError);
  ClassStats flat = t.stats;
  flat.sigma[0] = 0.0;
  CHECK_THROWS_AS(cheat_search(t.id, t.ood, flat, SearchMetric::g_mean), DegenerateScaleError);
}

TEST_CASE("search equals the dense-grid optimum on random tables") {
  Rng rng(derive_seed(1, SeedStream::search_check));
  for (int i = 0; i < 40; ++i) {
    const SearchCase c = random_search_case(rng);
    const NegZScores z = collect_neg_z(c.id_table, c.ood_table, c.stats);
    for (auto metric : {SearchMetric::g_mean, SearchMetric::total_accuracy}) {
      const auto r = cheat_search(c.id_table, c.ood_table, c.stats, metric);
      const auto grid = dense_grid_search(z.id, z.ood, metric);
      CHECK(std::abs(r.metric_value - grid.metric_value) <= 1e-12);
      CHECK(r.metric_value >= grid.metric_value);
      // result fields agree with the rule at the returned eta
      const auto [acc_id, acc_ood] = accuracies_at(z.id, z.ood, r.eta_star);
      CHECK(acc_id == r.acc_id);
      CHECK(acc_ood == r.acc_ood);
      CHECK(std::abs(metric_value(metric, acc_id, acc_ood) - r.metric_value) <= 1e-12);
    }
  }
}

TEST_CASE("accuracies are monotone in eta over the candidates") {
  Rng rng(derive_seed(2, SeedStream::search_check));
  for (int i = 0; i < 50; ++i) {
    const SearchCase c = random_search_case(rng);
    const NegZScores z = collect_neg_z(c.id_table, c.ood_table, c.stats);
    double last_id = -1.0, last_ood = 2.0;
    for (double eta : candidate_etas(z.id, z.ood)) {
      const auto [acc_id, acc_ood] = accuracies_at(z.id, z.ood, eta);
      CHECK(acc_id >= last_id);
      CHECK(acc_ood <= last_ood);
      last_id = acc_id;
      last_ood = acc_ood;
    }
    CHECK(last_id == 1.0);
    CHECK(last_ood == 0.0);
  }
}

TEST_CASE("duplicating an OOD row keeps eta* on separable data") {
  const std::vector<double> id{-2.0, -1.5, -0.25};
  std::vector<double> ood{0.5, 1.0, 3.0};
  const double before = search_eta(id, ood, SearchMetric::total_accuracy).eta_star;
  for (double extra : {0.5, 1.0, 3.0}) {
    auto more = ood;
    more.push_back(extra);
    CHECK(search_eta(id, more, SearchMetric::total_accuracy).eta_star == before);
  }
}

TEST_CASE("eta* is invariant under a positive affine map of scores") {
  Rng rng(derive_seed(3, SeedStream::search_check));
  for (int i = 0; i < 30; ++i) {
    SearchCase c = random_search_case(rng);
    // refit stats so both versions derive them the same way
    bool enough = true;
    for (int k = 0; k < c.id_table.n_classes; ++k) enough = enough && c.stats.n[k] >= 2;
    if (!enough) continue;
    ClassStats fitted;
    try {
      fitted = fit_class_stats(c.id_table);
    } catch (const InsufficientDataError&) {
      continue;
    }
    if (std::any_of(fitted.sigma.begin(), fitted.sigma.end(), [](double s) { return s == 0.0; })) continue;

    auto mapped = c;
    for (auto* table : {&mapped.id_table, &mapped.ood_table}) {
      for (auto& row : table->rows) {
        for (auto& s : row.scores) s = 3.0 * s + 2.0;
      }
    }
    const ClassStats refit = fit_class_stats(mapped.id_table);
    for (auto metric : {SearchMetric::g_mean, SearchMetric::total_accuracy}) {
      const auto a = cheat_search(c.id_table, c.ood_table, fitted, metric);
      const auto b = cheat_search(mapped.id_table, mapped.ood_table, refit, metric);
      CHECK(b.eta_star == doctest::Approx(a.eta_star).epsilon(1e-9));
      CHECK(b.metric_value == doctest::Approx(a.metric_value).epsilon(1e-12));
    }
  }
}

TEST_CASE("random search cases respect their construction") {
  Rng rng(derive_seed(4, SeedStream::search_check));
  for (int i = 0; i < 200; ++i) {
    const SearchCase c = random_search_case(rng, 200, 6);
    CHECK(c.id_table.size() + c.ood_table.size() <= 200);
    CHECK(c.id_table.n_classes >= 2);
    CHECK(c.id_table.n_classes <= 6);
    CHECK_FALSE(c.ood_table.empty());
    CHECK(std::any_of(c.id_table.rows.begin(), c.id_table.rows.end(), [](const ScoreRow& r) { return r.correct; }));
    for (const auto& row : c.id_table.rows) {
      for (double s : row.scores) CHECK(s * 64.0 == std::round(s * 64.0));
    }
  }
  const SearchCase minimal = random_search_case(rng, 2, 2);
  CHECK(minimal.id_table.size() == 1);
  CHECK(minimal.ood_table.size() == 1);
}

TEST_CASE("dense grid on a worked example") {
  const auto g = dense_grid_search(std::vector<double>{-1.2, 0.3}, std::vector<double>{0.9, 2.0},
                                   SearchMetric::g_mean, 1000);
  CHECK(g.metric_value == 1.0);
  CHECK(g.eta > 0.3);
  CHECK(g.eta < 0.9);
}
