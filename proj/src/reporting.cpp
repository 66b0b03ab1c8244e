#include "contood/reporting.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <tuple>

#include <boost/math/distributions/students_t.hpp>
#include "json.hpp"

#include "contood/error.hpp"
#include "contood/threshold_search.hpp"

namespace contood {

std::string_view to_string(Method method) {
  switch (method) {
    case Method::fixed_shels: return "fixed_shels";
    case Method::cheating: return "cheating";
    case Method::dynamic: return "dynamic";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  if (name == "fixed_shels" || name == "fixed") return Method::fixed_shels;
  if (name == "cheating") return Method::cheating;
  if (name == "dynamic") return Method::dynamic;
  throw ValueError("unknown method '" + std::string(name) + "'");
}

StageReport make_stage_report(int seed, int stage, int n_id_classes, Method method,
                              double acc_id, double acc_ood, double eta_used) {
  StageReport r;
  r.seed = seed;
  r.stage = stage;
  r.n_id_classes = n_id_classes;
  r.method = method;
  r.acc_id = acc_id;
  r.acc_ood = acc_ood;
  r.total = metric_value(SearchMetric::total_accuracy, acc_id, acc_ood);
  r.gmean = metric_value(SearchMetric::g_mean, acc_id, acc_ood);
  r.eta_used = eta_used;
  return r;
}

void sort_reports(std::vector<StageReport>& reports) {
  std::stable_sort(reports.begin(), reports.end(), [](const auto& a, const auto& b) {
    return std::tuple(a.seed, a.stage, static_cast<int>(a.method)) <
           std::tuple(b.seed, b.stage, static_cast<int>(b.method));
  });
}

StageAccuracy evaluate_tables(const ThresholdPolicy& policy, const ScoreTable& id_table,
                              const ScoreTable& ood_table) {
  std::size_t id_ok = 0;
  for (const auto& row : id_table.rows) {
    const auto d = decide(policy, row.scores);
    if (d.in_distribution && d.predicted == row.true_label) ++id_ok;
  }
  std::size_t ood_ok = 0;
  for (const auto& row : ood_table.rows) {
    if (!decide(policy, row.scores).in_distribution) ++ood_ok;
  }
  auto fraction = [](std::size_t hits, std::size_t n) {
    return n == 0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(n);
  };
  return {fraction(id_ok, id_table.size()), fraction(ood_ok, ood_table.size())};
}

StageAccuracy evaluate_stage(const NetworkState& net, const ThresholdPolicy& policy,
                             const LabeledDataset& id_test, const LabeledDataset& ood_eval) {
  return evaluate_tables(policy, build_score_table(net, id_test, false),
                         build_score_table(net, ood_eval, true));
}

// ---------------------------------------------------------------------------

namespace {

std::pair<double, double> mean_and_var(std::span<const double> v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, v.size() > 1 ? ss / static_cast<double>(v.size() - 1) : 0.0};
}

}  // namespace

TTestResult students_t(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw ValueError("t-test needs >= 2 values per group");
  const auto [mean_a, var_a] = mean_and_var(a);
  const auto [mean_b, var_b] = mean_and_var(b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double df = na + nb - 2.0;
  const double pooled = ((na - 1.0) * var_a + (nb - 1.0) * var_b) / df;
  const double diff = mean_a - mean_b;

  if (pooled == 0.0) {
    if (diff == 0.0) return {0.0, 1.0};
    return {std::copysign(std::numeric_limits<double>::infinity(), diff), 0.0};
  }
  const double t = diff / std::sqrt(pooled * (1.0 / na + 1.0 / nb));
  const boost::math::students_t_distribution<double> dist(df);
  const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  return {t, std::min(1.0, p)};
}

std::vector<double> holm_bonferroni(std::span<const double> p_values) {
  for (double p : p_values) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValueError("p-values must lie in [0, 1]");
  }
  const std::size_t m = p_values.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return p_values[i] < p_values[j]; });

  std::vector<double> adjusted(m);
  double running = 0.0;
  for (std::size_t rank = 0; rank < m; ++rank) {
    const double scaled = static_cast<double>(m - rank) * p_values[order[rank]];
    running = std::max(running, scaled);
    adjusted[order[rank]] = std::min(1.0, running);
  }
  return adjusted;
}

std::vector<AggregateRow> aggregate(std::span<const StageReport> reports) {
  static constexpr std::array<std::string_view, 4> kMetrics = {"acc_id", "acc_ood", "total", "gmean"};
  auto metric_of = [](const StageReport& r, std::size_t m) {
    switch (m) {
      case 0: return r.acc_id;
      case 1: return r.acc_ood;
      case 2: return r.total;
      default: return r.gmean;
    }
  };

  // (stage, method) -> reports ordered by seed
  std::map<std::pair<int, int>, std::vector<const StageReport*>> groups;
  for (const auto& r : reports) groups[{r.stage, static_cast<int>(r.method)}].push_back(&r);
  for (auto& [key, v] : groups) {
    std::stable_sort(v.begin(), v.end(), [](auto* a, auto* b) { return a->seed < b->seed; });
  }

  std::vector<AggregateRow> rows;
  for (const auto& [key, group] : groups) {
    const auto fixed = groups.find({key.first, static_cast<int>(Method::fixed_shels)});
    for (std::size_t m = 0; m < kMetrics.size(); ++m) {
      std::vector<double> values;
      for (auto* r : group) values.push_back(metric_of(*r, m));
      const auto [mean, var] = mean_and_var(values);

      AggregateRow row;
      row.stage = key.first;
      row.n_id_classes = group.front()->n_id_classes;
      row.method = static_cast<Method>(key.second);
      row.metric = kMetrics[m];
      row.n_seeds = values.size();
      row.mean = mean;
      row.std_dev = std::sqrt(var);
      if (row.method != Method::fixed_shels && fixed != groups.end() && values.size() >= 2 &&
          fixed->second.size() >= 2) {
        std::vector<double> baseline;
        for (auto* r : fixed->second) baseline.push_back(metric_of(*r, m));
        row.p_unadjusted = students_t(values, baseline).p;
      }
      rows.push_back(std::move(row));
    }
  }

  // Holm family: one method and one metric across all stages.
  std::map<std::pair<int, std::string>, std::vector<std::size_t>> families;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].p_unadjusted) families[{static_cast<int>(rows[i].method), rows[i].metric}].push_back(i);
  }
  for (const auto& [key, members] : families) {
    std::vector<double> p;
    for (std::size_t i : members) p.push_back(*rows[i].p_unadjusted);
    const auto adjusted = holm_bonferroni(p);
    for (std::size_t k = 0; k < members.size(); ++k) rows[members[k]].p_adjusted = adjusted[k];
  }
  return rows;
}

// ---------------------------------------------------------------------------

ReportFormat parse_format(std::string_view name) {
  if (name == "csv") return ReportFormat::csv;
  if (name == "json") return ReportFormat::json;
  throw ValueError("unknown format '" + std::string(name) + "'");
}

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void write_reports_csv(std::ostream& out, std::span<const StageReport> reports) {
  out << "seed,stage,n_id_classes,method,acc_id,acc_ood,total,gmean,eta\n";
  for (const auto& r : reports) {
    out << r.seed << ',' << r.stage << ',' << r.n_id_classes << ',' << to_string(r.method) << ','
        << fixed6(r.acc_id) << ',' << fixed6(r.acc_ood) << ',' << fixed6(r.total) << ','
        << fixed6(r.gmean) << ',' << fixed6(r.eta_used) << '\n';
  }
}

void write_reports_json(std::ostream& out, std::span<const StageReport> reports) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& r : reports) {
    doc.push_back({{"seed", r.seed},
                   {"stage", r.stage},
                   {"n_id_classes", r.n_id_classes},
                   {"method", to_string(r.method)},
                   {"acc_id", r.acc_id},
                   {"acc_ood", r.acc_ood},
                   {"total", r.total},
                   {"gmean", r.gmean},
                   {"eta", r.eta_used}});
  }
  out << doc.dump(2) << '\n';
}

std::vector<StageReport> read_reports_json(std::istream& in) {
  std::vector<StageReport> reports;
  try {
    const auto doc = nlohmann::json::parse(in);
    for (const auto& item : doc) {
      StageReport r;
      r.seed = item.at("seed").get<int>();
      r.stage = item.at("stage").get<int>();
      r.n_id_classes = item.at("n_id_classes").get<int>();
      r.method = parse_method(item.at("method").get<std::string>());
      r.acc_id = item.at("acc_id").get<double>();
      r.acc_ood = item.at("acc_ood").get<double>();
      r.total = item.at("total").get<double>();
      r.gmean = item.at("gmean").get<double>();
      r.eta_used = item.at("eta").get<double>();
      reports.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report JSON: ") + e.what());
  }
  return reports;
}

std::vector<StageReport> read_reports_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_reports_json(in);
}

void emit(std::span<const StageReport> reports, const std::filesystem::path& path,
          ReportFormat format) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  if (format == ReportFormat::csv) {
    write_reports_csv(out, reports);
  } else {
    write_reports_json(out, reports);
  }
  if (!out) throw IoError("short write to " + path.string());
}

void write_aggregate_csv(std::ostream& out, std::span<const AggregateRow> rows) {
  out << "stage,n_id_classes,method,metric,n_seeds,mean,std,p_unadjusted,p_adjusted\n";
  for (const auto& r : rows) {
    out << r.stage << ',' << r.n_id_classes << ',' << to_string(r.method) << ',' << r.metric
        << ',' << r.n_seeds << ',' << fixed6(r.mean) << ',' << fixed6(r.std_dev) << ','
        << (r.p_unadjusted ? fixed6(*r.p_unadjusted) : "") << ','
        << (r.p_adjusted ? fixed6(*r.p_adjusted) : "") << '\n';
  }
}

void write_aggregate_csv(const std::filesystem::path& path, std::span<const AggregateRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  write_aggregate_csv(out, rows);
}

}  // namespace contood
