#include "doctest.h"

#include <random>
#include <sstream>

#include "contood/error.hpp"
#include "contood/scoring.hpp"

using namespace contood;

namespace {

// One hidden layer of identity weights and an identity head: input e_c lands
// exactly on head column c.
NetworkState identity_net(int n) {
  const int hidden[] = {n};
  NetworkState net = make_network(static_cast<std::size_t>(n), hidden, n, 1);
  net.hidden[0].weights = Matrix::Identity(n, n);
  net.hidden[0].bias.setZero();
  net.head = Matrix::Identity(n, n);
  return net;
}

ScoreTable table_from(int n_classes, const std::vector<std::pair<int, std::vector<double>>>& rows) {
  ScoreTable t;
  t.n_classes = n_classes;
  for (const auto& [label, scores] : rows) t.rows.push_back(make_score_row(label, scores));
  return t;
}

ClassStats one_class(double mu, double sigma) {
  ClassStats s;
  s.mu = {mu};
  s.sigma = {sigma};
  s.n = {10};
  return s;
}

}  // namespace

TEST_CASE("score table from a net that maps classes to their own columns") {
  const NetworkState net = identity_net(3);
  LabeledDataset ds(3, 3, Split::train, Source::synthetic);
  ds.add(std::vector<float>{1, 0, 0}, 0);
  ds.add(std::vector<float>{0, 2, 0}, 1);
  ds.add(std::vector<float>{0, 0, 1}, 1);  // lands on column 2: misclassified

  const ScoreTable id = build_score_table(net, ds, false);
  REQUIRE(id.size() == 3);
  CHECK(id.rows[0].argmax == 0);
  CHECK(id.rows[0].correct);
  CHECK(id.rows[1].correct);
  CHECK_FALSE(id.rows[2].correct);
  CHECK(id.rows[0].scores[0] == doctest::Approx(1.0));

  const ScoreTable ood = build_score_table(net, ds, true);
  for (const auto& row : ood.rows) {
    CHECK(row.true_label == kOodLabel);
    CHECK_FALSE(row.correct);
  }

  CHECK(build_score_table(net, LabeledDataset(3, 3, Split::test, Source::synthetic), false).empty());

  LabeledDataset wrong(4, 3, Split::train, Source::synthetic);
  wrong.add(std::vector<float>{1, 0, 0, 0}, 0);
  CHECK_THROWS_AS(build_score_table(net, wrong, false), ShapeError);
}

TEST_CASE("argmax ties go to the lowest index") {
  CHECK(argmax_lowest(std::vector<double>{0.2, 0.7, 0.7}) == 1);
  CHECK(argmax_lowest(std::vector<double>{0.5, 0.5}) == 0);
  CHECK(make_score_row(0, std::vector<double>{0.5, 0.5}).correct);
  CHECK_FALSE(make_score_row(1, std::vector<double>{0.5, 0.5}).correct);
}

TEST_CASE("fit_class_stats") {
  SUBCASE("mean and n-1 standard deviation") {
    const auto t = table_from(2, {{0, {1.0, 0.0}}, {0, {2.0, 0.0}}, {0, {3.0, 0.0}},
                                  {1, {0.0, 5.0}}, {1, {0.0, 7.0}}});
    const ClassStats s = fit_class_stats(t);
    CHECK(s.mu[0] == 2.0);
    CHECK(s.sigma[0] == 1.0);
    CHECK(s.n[0] == 3);
    CHECK(s.mu[1] == 6.0);
    CHECK(s.sigma[1] == doctest::Approx(std::sqrt(2.0)));
  }
  SUBCASE("misclassified and OOD rows are excluded") {
    const auto clean = table_from(2, {{0, {1.0, 0.0}}, {0, {3.0, 0.0}}, {1, {0.0, 5.0}}, {1, {0.0, 7.0}}});
    auto noisy = clean;
    noisy.rows.push_back(make_score_row(0, std::vector<double>{0.1, 0.9}));
    noisy.rows.push_back(make_score_row(kOodLabel, std::vector<double>{9.0, 0.0}));
    const ClassStats a = fit_class_stats(clean);
    const ClassStats b = fit_class_stats(noisy);
    CHECK(a.mu == b.mu);
    CHECK(a.sigma == b.sigma);
    CHECK(a.n == b.n);
  }
  SUBCASE("a class with one correct row") {
    const auto t = table_from(2, {{0, {1.0, 0.0}}, {0, {3.0, 0.0}}, {1, {0.0, 5.0}}});
    try {
      fit_class_stats(t);
      FAIL("expected InsufficientDataError");
    } catch (const InsufficientDataError& e) {
      CHECK(e.class_id() == 1);
    }
  }
  SUBCASE("fallback keeps the previous entry") {
    const auto t = table_from(2, {{0, {1.0, 0.0}}, {0, {3.0, 0.0}}, {1, {0.0, 5.0}}});
    ClassStats previous;
    previous.mu = {0.0, 0.4};
    previous.sigma = {1.0, 0.1};
    previous.n = {5, 5};
    std::vector<int> fell_back;
    const ClassStats s = fit_class_stats(t, previous, fell_back);
    CHECK(fell_back == std::vector<int>{1});
    CHECK(s.mu[1] == 0.4);
    CHECK(s.sigma[1] == 0.1);
    CHECK(s.mu[0] == 2.0);
  }
}

TEST_CASE("neg_z") {
  ClassStats s = one_class(10.0, 2.0);
  CHECK(neg_z(s, 0, 7.0) == 1.5);
  CHECK(neg_z(s, 0, 10.0) == 0.0);
  s.sigma[0] = 0.0;
  CHECK_THROWS_AS(neg_z(s, 0, 1.0), DegenerateScaleError);
  CHECK_THROWS_AS(neg_z(s, 1, 1.0), ShapeError);
}

TEST_CASE("decide") {
  ThresholdPolicy p{1.0, one_class(0.9, 0.05)};
  CHECK(decide(p, std::vector<double>{0.88}) == Decision{true, 0});
  CHECK(decide(p, std::vector<double>{0.80}) == Decision{false, 0});

  // dyadic values so the threshold is exact: 0.75 - 1 * 0.25 = 0.5
  ThresholdPolicy exact{1.0, one_class(0.75, 0.25)};
  CHECK(exact.threshold(0) == 0.5);
  CHECK_FALSE(decide(exact, std::vector<double>{0.5}).in_distribution);
  CHECK(decide(exact, std::vector<double>{0.5000001}).in_distribution);

  CHECK_THROWS_AS(decide(exact, std::vector<double>{0.5, 0.1}), ShapeError);
}

TEST_CASE("decide agrees with the neg_z rule and is monotone in eta") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> spread(0.01, 0.5);
  std::uniform_real_distribution<double> eta_dist(-3.0, 3.0);
  std::uniform_int_distribution<int> classes(1, 6);

  for (int trial = 0; trial < 10000; ++trial) {
    const int n = classes(rng);
    ClassStats stats;
    std::vector<double> scores(static_cast<std::size_t>(n));
    for (int c = 0; c < n; ++c) {
      stats.mu.push_back(unit(rng));
      stats.sigma.push_back(spread(rng));
      stats.n.push_back(10);
      scores[c] = unit(rng);
    }
    const double eta = eta_dist(rng);
    const ThresholdPolicy policy{eta, stats};
    const Decision d = decide(policy, scores);
    const int c = argmax_lowest(scores);
    REQUIRE(d.predicted == c);
    REQUIRE(d.in_distribution == (neg_z(stats, c, scores[c]) < eta));

    // direct mu - eta * sigma comparison
    REQUIRE(d.in_distribution == (scores[c] > stats.mu[c] - eta * stats.sigma[c]));

    if (d.in_distribution) {
      const ThresholdPolicy looser{eta + std::abs(eta_dist(rng)), stats};
      REQUIRE(decide(looser, scores).in_distribution);
    }
  }
}

TEST_CASE("score table CSV") {
  const auto t = table_from(2, {{0, {0.5, 0.25}}, {kOodLabel, {0.125, 1.0}}});
  std::ostringstream out;
  write_score_table_csv(out, t);
  CHECK(out.str() == "true_label,argmax,correct,s_0,s_1\n0,0,1,0.5,0.25\n-1,1,0,0.125,1\n");
}
