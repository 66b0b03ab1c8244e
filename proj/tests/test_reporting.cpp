#include "doctest.h"

#include <cmath>
#include <limits>
#include <sstream>

#include "contood/error.hpp"
#include "contood/reporting.hpp"
#include "reference_stats.hpp"
#include "support.hpp"

using namespace contood;
using contood::testing::TempDir;

namespace {

ScoreTable single_class_table(const std::vector<double>& scores, bool ood) {
  ScoreTable t;
  t.n_classes = 1;
  for (double s : scores) t.rows.push_back(make_score_row(ood ? kOodLabel : 0, std::vector<double>{s}));
  return t;
}

StageReport report(int seed, int stage, Method m, double acc_id, double acc_ood) {
  return make_stage_report(seed, stage, 5 + stage, m, acc_id, acc_ood, 1.0);
}

}  // namespace

TEST_CASE("evaluate_tables: limits of eta") {
  ClassStats stats{{0.5}, {0.1}, {10}};
  const auto id = single_class_table({0.2, 0.5, 0.9}, false);
  const auto ood = single_class_table({0.1, 0.6}, true);
  const auto accept_all = evaluate_tables({1e6, stats}, id, ood);
  CHECK(accept_all.acc_id == 1.0);
  CHECK(accept_all.acc_ood == 0.0);
  const auto reject_all = evaluate_tables({-1e6, stats}, id, ood);
  CHECK(reject_all.acc_id == 0.0);
  CHECK(reject_all.acc_ood == 1.0);
}

TEST_CASE("evaluate_tables: argmax errors count against ID accuracy") {
  ClassStats stats{{0.5, 0.5}, {0.1, 0.1}, {10, 10}};
  ScoreTable id{2, {make_score_row(0, std::vector<double>{0.9, 0.1}), make_score_row(1, std::vector<double>{0.9, 0.1})}};
  const auto acc = evaluate_tables({1e6, stats}, id, ScoreTable{2, {}});
  CHECK(acc.acc_id == 0.5);
  CHECK(acc.acc_ood == 1.0);
}

TEST_CASE("students_t: hand cases") {
  const std::vector<double> a{1, 2, 3};
  const auto same = students_t(a, a);
  CHECK(same.t == 0.0);
  CHECK(same.p == 1.0);

  const auto apart = students_t(std::vector<double>{0, 0, 0}, std::vector<double>{1, 1, 1});
  CHECK(apart.p == 0.0);
  CHECK(apart.t == -std::numeric_limits<double>::infinity());

  // scipy: t = -1.0954451150103321, p = 0.3153335962012298
  const auto shifted = students_t(std::vector<double>{1, 2, 3, 4}, std::vector<double>{2, 3, 4, 5});
  CHECK(shifted.t == doctest::Approx(-1.0954451150103321).epsilon(1e-12));
  CHECK(shifted.p == doctest::Approx(0.3153335962012298).epsilon(1e-10));

  CHECK_THROWS_AS(students_t(std::vector<double>{1}, std::vector<double>{1, 2}), ValueError);
}

TEST_CASE("students_t: reference values") {
  for (const auto& c : contood::testing::kTCases) {
    const auto r = students_t(c.a, c.b);
    CHECK(std::abs(r.t - c.t) < 1e-6);
    CHECK(std::abs(r.p - c.p) < 1e-6);
  }
}

TEST_CASE("holm_bonferroni: hand cases") {
  CHECK(holm_bonferroni(std::vector<double>{0.01, 0.04}) == std::vector<double>{0.02, 0.04});
  CHECK(holm_bonferroni(std::vector<double>{1.0}) == std::vector<double>{1.0});
  CHECK(holm_bonferroni(std::vector<double>{0.6, 0.6, 0.6}) == std::vector<double>{1.0, 1.0, 1.0});
  CHECK(holm_bonferroni(std::vector<double>{0.04, 0.01}) == std::vector<double>{0.04, 0.02});
  CHECK(holm_bonferroni({}).empty());
  CHECK_THROWS_AS(holm_bonferroni(std::vector<double>{0.5, 1.2}), ValueError);
  CHECK_THROWS_AS(holm_bonferroni(std::vector<double>{-0.1}), ValueError);
}

TEST_CASE("holm_bonferroni: reference values and order preservation") {
  for (const auto& c : contood::testing::kHolmCases) {
    const auto adj = holm_bonferroni(c.p);
    REQUIRE(adj.size() == c.adjusted.size());
    for (std::size_t i = 0; i < adj.size(); ++i) {
      CHECK(std::abs(adj[i] - c.adjusted[i]) < 1e-6);
      CHECK(adj[i] >= c.p[i]);
      for (std::size_t j = 0; j < adj.size(); ++j) {
        if (c.p[i] < c.p[j]) CHECK(adj[i] <= adj[j]);
      }
    }
  }
}

TEST_CASE("stage report derived fields") {
  const auto r = make_stage_report(3, 1, 6, Method::dynamic, 0.81, 0.49, 0.7);
  CHECK(r.total == doctest::Approx(0.65).epsilon(1e-12));
  CHECK(r.gmean == doctest::Approx(0.63).epsilon(1e-12));
  CHECK_THROWS_AS(make_stage_report(0, 0, 5, Method::dynamic, 1.2, 0.5, 1.0), ValueError);
}

TEST_CASE("reports sort by seed, stage, method") {
  std::vector<StageReport> rs{report(2, 0, Method::dynamic, 1, 1), report(1, 1, Method::fixed_shels, 1, 1),
                              report(1, 0, Method::dynamic, 1, 1), report(1, 0, Method::fixed_shels, 1, 1),
                              report(1, 0, Method::cheating, 1, 1)};
  sort_reports(rs);
  CHECK(rs[0].method == Method::fixed_shels);
  CHECK(rs[1].method == Method::cheating);
  CHECK(rs[2].method == Method::dynamic);
  CHECK(rs[3].stage == 1);
  CHECK(rs[4].seed == 2);
}

TEST_CASE("CSV emission") {
  std::ostringstream one;
  const StageReport r = make_stage_report(7, 2, 7, Method::cheating, 0.5, 0.25, 1.2345678);
  write_reports_csv(one, std::vector<StageReport>{r});
  CHECK(one.str() ==
        "seed,stage,n_id_classes,method,acc_id,acc_ood,total,gmean,eta\n"
        "7,2,7,cheating,0.500000,0.250000,0.375000,0.353553,1.234568\n");

  std::ostringstream none;
  write_reports_csv(none, {});
  CHECK(none.str() == "seed,stage,n_id_classes,method,acc_id,acc_ood,total,gmean,eta\n");
}

TEST_CASE("JSON round-trip") {
  TempDir dir;
  std::vector<StageReport> rs;
  for (int seed = 0; seed < 3; ++seed) {
    for (Method m : {Method::fixed_shels, Method::cheating, Method::dynamic}) {
      rs.push_back(make_stage_report(seed, seed % 2, 5, m, 1.0 / (seed + 3), 2.0 / 7.0, -0.1 * seed));
    }
  }
  emit(rs, dir / "r.json", ReportFormat::json);
  CHECK(read_reports_json(dir / "r.json") == rs);

  emit(rs, dir / "r.csv", ReportFormat::csv);
  CHECK(std::filesystem::file_size(dir / "r.csv") > 0);

  CHECK_THROWS_AS(emit(rs, dir / "no" / "such" / "dir.csv", ReportFormat::csv), IoError);

  std::istringstream garbage("[{\"seed\": 1}]");
  CHECK_THROWS_AS(read_reports_json(garbage), FormatError);
}

TEST_CASE("aggregation across seeds") {
  std::vector<StageReport> rs;
  const double id_acc[] = {0.9, 0.8, 0.85, 0.7};
  const double ood_acc[] = {0.6, 0.65, 0.7, 0.5};
  for (int seed = 0; seed < 4; ++seed) {
    for (int stage = 0; stage < 3; ++stage) {
      rs.push_back(report(seed, stage, Method::fixed_shels, id_acc[seed] - 0.1 * stage, ood_acc[seed]));
      rs.push_back(report(seed, stage, Method::dynamic, id_acc[seed], ood_acc[(seed + stage) % 4]));
    }
  }
  const auto rows = aggregate(rs);
  CHECK(rows.size() == 3 * 2 * 4);

  auto find = [&](int stage, Method m, const std::string& metric) {
    for (const auto& row : rows) {
      if (row.stage == stage && row.method == m && row.metric == metric) return row;
    }
    FAIL("row missing");
    return AggregateRow{};
  };
  for (int stage = 0; stage < 3; ++stage) {
    for (Method m : {Method::fixed_shels, Method::dynamic}) {
      const auto total = find(stage, m, "total");
      const auto id = find(stage, m, "acc_id");
      const auto ood = find(stage, m, "acc_ood");
      CHECK(std::abs(total.mean - (id.mean + ood.mean) / 2.0) <= 1e-12);
      CHECK(total.n_seeds == 4);
      if (m == Method::fixed_shels) {
        CHECK_FALSE(total.p_unadjusted.has_value());
      } else {
        REQUIRE(total.p_unadjusted.has_value());
        REQUIRE(total.p_adjusted.has_value());
        CHECK(*total.p_adjusted >= *total.p_unadjusted);
        CHECK(*total.p_adjusted <= 1.0);
        CHECK(*total.p_unadjusted >= 0.0);
      }
    }
  }
  // stage 0: identical acc_id samples for both methods
  CHECK(*find(0, Method::dynamic, "acc_id").p_unadjusted == 1.0);

  std::ostringstream out;
  write_aggregate_csv(out, rows);
  CHECK(out.str().rfind("stage,n_id_classes,method,metric,n_seeds,mean,std,p_unadjusted,p_adjusted\n", 0) == 0);
}
