#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "contood/scoring.hpp"

namespace contood {

enum class SearchMetric { total_accuracy, g_mean };

std::string_view to_string(SearchMetric metric);
SearchMetric parse_metric(std::string_view name);

// total = (acc_id + acc_ood) / 2, g_mean = sqrt(acc_id * acc_ood).
// Inputs outside [0, 1] throw ValueError.
double metric_value(SearchMetric metric, double acc_id, double acc_ood);

struct SearchResult {
  double eta_star = 0.0;
  double metric_value = 0.0;
  double acc_id = 0.0;
  double acc_ood = 0.0;
  std::size_t n_candidates = 0;
};

// Midpoints between adjacent distinct values of the pooled Z' set, plus
// (min - 1) and (max + 1). Strictly increasing.
std::vector<double> candidate_etas(std::span<const double> id_z, std::span<const double> ood_z);

// Linear search over candidate_etas. At each eta, an ID value counts as
// accepted if z < eta and an OOD value as detected if z > eta. Metric ties go
// to the smallest eta.
SearchResult search_eta(std::span<const double> id_z, std::span<const double> ood_z,
                        SearchMetric metric);

struct NegZScores {
  std::vector<double> id;   // correct ID rows, at their true class
  std::vector<double> ood;  // every OOD row, at its argmax class
};

NegZScores collect_neg_z(const ScoreTable& id_table, const ScoreTable& ood_table,
                         const ClassStats& stats);

// Look-ahead ("cheating") threshold search: uses the true OOD rows.
SearchResult cheat_search(const ScoreTable& id_table, const ScoreTable& ood_table,
                          const ClassStats& stats, SearchMetric metric);

}  // namespace contood
