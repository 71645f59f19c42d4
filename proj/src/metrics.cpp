#include "ecgmatch/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace ecgmatch {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool positive(double label) { return label > 0.5; }

}  // namespace

void ScoreMatrix::validate() const {
  if (scores.rows() != labels.rows() || scores.cols() != labels.cols())
    throw ContractViolation("ScoreMatrix: scores and labels differ in shape");
  if (!scores.allFinite()) throw NumericError("ScoreMatrix: non-finite score");
  if (scores.size() && (scores.minCoeff() < 0.0 || scores.maxCoeff() > 1.0))
    throw ContractViolation("ScoreMatrix: scores must lie in [0,1]");
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    const double v = labels.data()[i];
    if (v != 0.0 && v != 1.0) throw ContractViolation("ScoreMatrix: labels must be binary");
  }
}

double metric_value(const MetricsReport& r, int metric) {
  switch (metric) {
    case 0: return r.ranking_loss;
    case 1: return r.hamming_loss;
    case 2: return r.coverage;
    case 3: return r.map;
    case 4: return r.macro_auc;
    case 5: return r.macro_gbeta;
  }
  throw ContractViolation("metric index out of range");
}

double ranking_loss(const ScoreMatrix& sm, int* rows_skipped) {
  sm.validate();
  double total = 0.0;
  int valid = 0;
  std::vector<double> irrelevant;
  for (Eigen::Index i = 0; i < sm.scores.rows(); ++i) {
    irrelevant.clear();
    std::vector<double> relevant;
    for (Eigen::Index c = 0; c < sm.scores.cols(); ++c)
      (positive(sm.labels(i, c)) ? relevant : irrelevant).push_back(sm.scores(i, c));
    if (relevant.empty() || irrelevant.empty()) continue;
    std::sort(irrelevant.begin(), irrelevant.end());
    double bad = 0.0;
    for (double s : relevant) {
      const auto lo = std::lower_bound(irrelevant.begin(), irrelevant.end(), s);
      const auto hi = std::upper_bound(irrelevant.begin(), irrelevant.end(), s);
      bad += static_cast<double>(irrelevant.end() - hi) + 0.5 * static_cast<double>(hi - lo);
    }
    total += bad / static_cast<double>(relevant.size() * irrelevant.size());
    ++valid;
  }
  if (rows_skipped) *rows_skipped = static_cast<int>(sm.scores.rows()) - valid;
  if (valid == 0) throw UndefinedMetricError("ranking_loss: no row has both relevant and irrelevant labels");
  return total / valid;
}

double hamming_loss(const ScoreMatrix& sm, double threshold) {
  sm.validate();
  if (sm.scores.size() == 0) return 0.0;
  double wrong = 0.0;
  for (Eigen::Index i = 0; i < sm.scores.rows(); ++i)
    for (Eigen::Index c = 0; c < sm.scores.cols(); ++c)
      wrong += (sm.scores(i, c) > threshold) != positive(sm.labels(i, c));
  return wrong / static_cast<double>(sm.scores.size());
}

double coverage(const ScoreMatrix& sm, int* rows_skipped) {
  sm.validate();
  double total = 0.0;
  int valid = 0;
  std::vector<double> sorted;
  for (Eigen::Index i = 0; i < sm.scores.rows(); ++i) {
    sorted.assign(sm.scores.row(i).data(), sm.scores.row(i).data() + sm.scores.cols());
    std::sort(sorted.begin(), sorted.end());
    double worst = 0.0;
    bool any = false;
    for (Eigen::Index c = 0; c < sm.scores.cols(); ++c) {
      if (!positive(sm.labels(i, c))) continue;
      any = true;
      // Number of labels scored at least as high as c.
      const auto lo = std::lower_bound(sorted.begin(), sorted.end(), sm.scores(i, c));
      worst = std::max(worst, static_cast<double>(sorted.end() - lo));
    }
    if (!any) continue;
    total += worst;
    ++valid;
  }
  if (rows_skipped) *rows_skipped = static_cast<int>(sm.scores.rows()) - valid;
  if (valid == 0) throw UndefinedMetricError("coverage: no row has a relevant label");
  return total / valid;
}

double mean_average_precision(const ScoreMatrix& sm, Vector* per_class, int* classes_skipped) {
  sm.validate();
  const Eigen::Index n = sm.scores.rows();
  const Eigen::Index classes = sm.scores.cols();
  Vector ap = Vector::Constant(classes, kNaN);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  double total = 0.0;
  int valid = 0;
  for (Eigen::Index c = 0; c < classes; ++c) {
    double positives = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) positives += positive(sm.labels(i, c));
    if (positives == 0.0) continue;
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](Eigen::Index a, Eigen::Index b) { return sm.scores(a, c) > sm.scores(b, c); });
    double seen = 0.0, seen_pos = 0.0, sum = 0.0;
    for (std::size_t g = 0; g < order.size();) {
      // A group of tied scores shares one threshold.
      std::size_t end = g;
      double group_pos = 0.0;
      while (end < order.size() && sm.scores(order[end], c) == sm.scores(order[g], c)) {
        group_pos += positive(sm.labels(order[end], c));
        ++end;
      }
      seen += static_cast<double>(end - g);
      seen_pos += group_pos;
      sum += group_pos * (seen_pos / seen);
      g = end;
    }
    ap(c) = sum / positives;
    total += ap(c);
    ++valid;
  }
  if (per_class) *per_class = ap;
  if (classes_skipped) *classes_skipped = static_cast<int>(classes) - valid;
  if (valid == 0) throw UndefinedMetricError("mean_average_precision: no class has a positive sample");
  return total / valid;
}

double macro_auc(const ScoreMatrix& sm, Vector* per_class, int* classes_skipped) {
  sm.validate();
  const Eigen::Index n = sm.scores.rows();
  const Eigen::Index classes = sm.scores.cols();
  Vector auc = Vector::Constant(classes, kNaN);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  double total = 0.0;
  int valid = 0;
  for (Eigen::Index c = 0; c < classes; ++c) {
    double pos = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) pos += positive(sm.labels(i, c));
    const double neg = static_cast<double>(n) - pos;
    if (pos == 0.0 || neg == 0.0) continue;
    // Mann-Whitney U with average ranks for ties.
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](Eigen::Index a, Eigen::Index b) { return sm.scores(a, c) < sm.scores(b, c); });
    double pos_rank_sum = 0.0;
    for (std::size_t g = 0; g < order.size();) {
      std::size_t end = g;
      double group_pos = 0.0;
      while (end < order.size() && sm.scores(order[end], c) == sm.scores(order[g], c)) {
        group_pos += positive(sm.labels(order[end], c));
        ++end;
      }
      const double avg_rank = 0.5 * static_cast<double>(g + 1 + end);
      pos_rank_sum += group_pos * avg_rank;
      g = end;
    }
    auc(c) = (pos_rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
    total += auc(c);
    ++valid;
  }
  if (per_class) *per_class = auc;
  if (classes_skipped) *classes_skipped = static_cast<int>(classes) - valid;
  if (valid == 0) throw UndefinedMetricError("macro_auc: no class has both positive and negative samples");
  return total / valid;
}

double macro_gbeta(const ScoreMatrix& sm, double beta, double threshold, Vector* per_class) {
  sm.validate();
  const Eigen::Index classes = sm.scores.cols();
  Vector g = Vector::Zero(classes);
  for (Eigen::Index c = 0; c < classes; ++c) {
    double tp = 0.0, fp = 0.0, fn = 0.0;
    for (Eigen::Index i = 0; i < sm.scores.rows(); ++i) {
      const bool pred = sm.scores(i, c) > threshold;
      const bool truth = positive(sm.labels(i, c));
      tp += pred && truth;
      fp += pred && !truth;
      fn += !pred && truth;
    }
    const double denom = tp + fn + beta * fp;
    g(c) = denom > 0.0 ? tp / denom : 0.0;
  }
  if (per_class) *per_class = g;
  return classes ? g.mean() : 0.0;
}

MetricsReport evaluate_metrics(const ScoreMatrix& sm, const MetricOptions& opts) {
  sm.validate();
  MetricsReport r;
  const int rows = static_cast<int>(sm.scores.rows());
  const int classes = static_cast<int>(sm.scores.cols());
  try {
    r.ranking_loss = ranking_loss(sm, &r.ranking_rows_skipped);
  } catch (const UndefinedMetricError&) {
    r.ranking_loss = kNaN;
    r.ranking_rows_skipped = rows;
  }
  r.hamming_loss = hamming_loss(sm, opts.threshold);
  try {
    r.coverage = coverage(sm, &r.coverage_rows_skipped);
  } catch (const UndefinedMetricError&) {
    r.coverage = kNaN;
    r.coverage_rows_skipped = rows;
  }
  try {
    r.map = mean_average_precision(sm, &r.per_class_ap, &r.map_classes_skipped);
  } catch (const UndefinedMetricError&) {
    r.map = kNaN;
    r.map_classes_skipped = classes;
    r.per_class_ap = Vector::Constant(classes, kNaN);
  }
  try {
    r.macro_auc = macro_auc(sm, &r.per_class_auc, &r.auc_classes_skipped);
  } catch (const UndefinedMetricError&) {
    r.macro_auc = kNaN;
    r.auc_classes_skipped = classes;
    r.per_class_auc = Vector::Constant(classes, kNaN);
  }
  r.macro_gbeta = macro_gbeta(sm, opts.beta, opts.threshold, &r.per_class_gbeta);
  return r;
}

void write_metrics_csv_row(std::ostream& out, const std::string& model, const std::string& dataset,
                           const std::string& seed, const MetricsReport& r) {
  out << model << ',' << dataset << ',' << seed;
  char buf[64];
  for (int m = 0; m < 6; ++m) {
    std::snprintf(buf, sizeof buf, "%.17g", metric_value(r, m));
    out << ',' << buf;
  }
  out << '\n';
}

std::vector<MetricsRow> read_metrics_csv(std::istream& in) {
  std::vector<MetricsRow> rows;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError("metrics csv: empty file", 1);
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricsCsvHeader) throw ParseError("metrics csv: unexpected header '" + line + "'", line_no);
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) throw ParseError("metrics csv: expected 9 columns", line_no);
    MetricsRow row{cells[0], cells[1], cells[2], {}};
    for (int m = 0; m < 6; ++m) {
      try {
        std::size_t used = 0;
        row.values[m] = std::stod(cells[3 + m], &used);
        if (used != cells[3 + m].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError("metrics csv: non-numeric cell '" + cells[3 + m] + "'", line_no);
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace ecgmatch
