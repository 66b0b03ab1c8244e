#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "contood/dataset.hpp"
#include "contood/network.hpp"
#include "contood/scoring.hpp"

namespace contood {

enum class Method { fixed_shels, cheating, dynamic };

std::string_view to_string(Method method);
Method parse_method(std::string_view name);

struct StageReport {
  int seed = 0;
  int stage = 0;
  int n_id_classes = 0;
  Method method = Method::dynamic;
  double acc_id = 0.0;
  double acc_ood = 0.0;
  double total = 0.0;
  double gmean = 0.0;
  double eta_used = 0.0;

  friend bool operator==(const StageReport&, const StageReport&) = default;
};

// Fills total and gmean from the two accuracies.
StageReport make_stage_report(int seed, int stage, int n_id_classes, Method method,
                              double acc_id, double acc_ood, double eta_used);

// Orders rows by (seed, stage, method).
void sort_reports(std::vector<StageReport>& reports);

struct StageAccuracy {
  double acc_id = 0.0;   // ID rows decided ID(true class); argmax errors count as failures
  double acc_ood = 0.0;  // OOD rows decided OOD
};

// Fractions over empty tables are vacuously 1.
StageAccuracy evaluate_tables(const ThresholdPolicy& policy, const ScoreTable& id_table,
                              const ScoreTable& ood_table);
StageAccuracy evaluate_stage(const NetworkState& net, const ThresholdPolicy& policy,
                             const LabeledDataset& id_test, const LabeledDataset& ood_eval);

// ---------------------------------------------------------------------------
// Significance testing

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
};

// Two-sample pooled-variance Student's t with a two-sided p-value on
// n_a + n_b - 2 degrees of freedom. Zero pooled variance gives (0, 1) for
// equal means and (+-inf, 0) otherwise.
TTestResult students_t(std::span<const double> a, std::span<const double> b);

// Holm step-down adjustment, returned in input order.
std::vector<double> holm_bonferroni(std::span<const double> p_values);

struct AggregateRow {
  int stage = 0;
  int n_id_classes = 0;
  Method method = Method::dynamic;
  std::string metric;  // acc_id, acc_ood, total, gmean
  std::size_t n_seeds = 0;
  double mean = 0.0;
  double std_dev = 0.0;  // sample (n-1) standard deviation
  std::optional<double> p_unadjusted;  // vs fixed_shels at the same stage
  std::optional<double> p_adjusted;    // Holm within (method, metric) across stages
};

std::vector<AggregateRow> aggregate(std::span<const StageReport> reports);

// ---------------------------------------------------------------------------
// Persistence

enum class ReportFormat { csv, json };

ReportFormat parse_format(std::string_view name);

// Columns: seed,stage,n_id_classes,method,acc_id,acc_ood,total,gmean,eta
// with reals printed to 6 decimals.
void write_reports_csv(std::ostream& out, std::span<const StageReport> reports);
// JSON array of objects with the same keys; reals at full precision.
void write_reports_json(std::ostream& out, std::span<const StageReport> reports);
std::vector<StageReport> read_reports_json(std::istream& in);
std::vector<StageReport> read_reports_json(const std::filesystem::path& path);

void emit(std::span<const StageReport> reports, const std::filesystem::path& path,
          ReportFormat format);

void write_aggregate_csv(std::ostream& out, std::span<const AggregateRow> rows);
void write_aggregate_csv(const std::filesystem::path& path, std::span<const AggregateRow> rows);

}  // namespace contood
