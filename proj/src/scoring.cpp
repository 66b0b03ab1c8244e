#include "contood/scoring.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <string>

#include "contood/error.hpp"

namespace contood {

int argmax_lowest(std::span<const double> scores) {
  if (scores.empty()) throw ShapeError("argmax of an empty score vector");
  int best = 0;
  for (std::size_t c = 1; c < scores.size(); ++c) {
    if (scores[c] > scores[best]) best = static_cast<int>(c);
  }
  return best;
}

ScoreRow make_score_row(int true_label, std::span<const double> scores) {
  ScoreRow row;
  row.true_label = true_label;
  row.argmax = argmax_lowest(scores);
  row.correct = true_label != kOodLabel && true_label == row.argmax;
  row.scores.assign(scores.begin(), scores.end());
  return row;
}

ScoreTable build_score_table(const NetworkState& net, const LabeledDataset& ds, bool ood) {
  ScoreTable table;
  table.n_classes = net.n_classes();
  if (table.n_classes < 1) throw ShapeError("network has no classes");
  const Matrix scores = score_dataset(net, ds);
  table.rows.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto r = scores.row(static_cast<Eigen::Index>(i));
    table.rows.push_back(make_score_row(ood ? kOodLabel : ds.label(i),
                                        std::span<const double>(r.data(), static_cast<std::size_t>(r.size()))));
  }
  return table;
}

void write_score_table_csv(std::ostream& out, const ScoreTable& table) {
  out << "true_label,argmax,correct";
  for (int c = 0; c < table.n_classes; ++c) out << ",s_" << c;
  out << '\n' << std::setprecision(17);
  for (const auto& row : table.rows) {
    out << row.true_label << ',' << row.argmax << ',' << (row.correct ? 1 : 0);
    for (double s : row.scores) out << ',' << s;
    out << '\n';
  }
}

void write_score_table_csv(const std::filesystem::path& path, const ScoreTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_score_table_csv(out, table);
}

namespace {

ClassStats fit_impl(const ScoreTable& table, const ClassStats* fallback,
                    std::vector<int>* fell_back) {
  const auto n_classes = static_cast<std::size_t>(table.n_classes);
  std::vector<double> sum(n_classes, 0.0);
  std::vector<int> count(n_classes, 0);
  for (const auto& row : table.rows) {
    if (!row.correct) continue;
    sum[row.true_label] += row.scores[row.true_label];
    ++count[row.true_label];
  }

  ClassStats stats;
  stats.mu.resize(n_classes);
  stats.sigma.resize(n_classes);
  stats.n = count;
  std::vector<double> sq(n_classes, 0.0);
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (count[c] >= 2) stats.mu[c] = sum[c] / count[c];
  }
  for (const auto& row : table.rows) {
    if (!row.correct) continue;
    const double d = row.scores[row.true_label] - stats.mu[row.true_label];
    sq[row.true_label] += d * d;
  }

  for (std::size_t c = 0; c < n_classes; ++c) {
    if (count[c] >= 2) {
      stats.sigma[c] = std::sqrt(sq[c] / (count[c] - 1));
      continue;
    }
    const auto id = static_cast<int>(c);
    if (fallback && id < fallback->n_classes()) {
      stats.mu[c] = fallback->mu[c];
      stats.sigma[c] = fallback->sigma[c];
      stats.n[c] = fallback->n[c];
      fell_back->push_back(id);
      continue;
    }
    throw InsufficientDataError("class " + std::to_string(c) + " has " +
                                    std::to_string(count[c]) +
                                    " correctly classified points, need 2",
                                id);
  }
  return stats;
}

}  // namespace

ClassStats fit_class_stats(const ScoreTable& table) {
  return fit_impl(table, nullptr, nullptr);
}

ClassStats fit_class_stats(const ScoreTable& table, const ClassStats& fallback,
                           std::vector<int>& fell_back) {
  return fit_impl(table, &fallback, &fell_back);
}

double neg_z(const ClassStats& stats, int c, double s) {
  if (c < 0 || c >= stats.n_classes()) throw ShapeError("class id outside stats");
  if (stats.sigma[c] == 0.0) {
    throw DegenerateScaleError("class " + std::to_string(c) + " has zero score spread");
  }
  return (stats.mu[c] - s) / stats.sigma[c];
}

Decision decide(const ThresholdPolicy& policy, std::span<const double> scores) {
  if (static_cast<int>(scores.size()) != policy.stats.n_classes()) {
    throw ShapeError("score vector has " + std::to_string(scores.size()) +
                     " entries, policy covers " + std::to_string(policy.stats.n_classes()));
  }
  const int c = argmax_lowest(scores);
  return {scores[c] > policy.threshold(c), c};
}

}  // namespace contood
