#pragma once

#include <cstddef>
#include <span>

#include "contood/rng.hpp"
#include "contood/scoring.hpp"
#include "contood/threshold_search.hpp"

namespace contood {

// Brute-force reference for the threshold search: evaluates the raw decision
// rule (ID accepted iff z < eta, OOD detected iff z > eta) on `points`
// evenly spaced eta values spanning [min z - 1, max z + 1].
struct GridOptimum {
  double eta = 0.0;
  double metric_value = 0.0;
};

GridOptimum dense_grid_search(std::span<const double> id_z, std::span<const double> ood_z,
                              SearchMetric metric, std::size_t points = 100000);

struct SearchCase {
  ScoreTable id_table;
  ScoreTable ood_table;
  ClassStats stats;
};

// Random tables with 2..max_classes classes and at most max_rows rows in
// total (at least one correct ID row and one OOD row). Scores, means and
// spreads are dyadic (scores on a 1/64 lattice, sigma in {1/16,...,1/2}), so
// every Z' is exact in floating point and distinct Z' values are at least
// 1/32 apart, which a 1e5-point grid always resolves.
SearchCase random_search_case(Rng& rng, std::size_t max_rows = 200, int max_classes = 6);

}  // namespace contood
