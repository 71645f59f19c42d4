#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ecgmatch/common.hpp"

namespace ecgmatch {

/// Scores in [0,1] and binary labels of identical shape (n x C).
struct ScoreMatrix {
  Matrix scores;
  Matrix labels;
  void validate() const;
};

struct MetricOptions {
  double beta = 2.0;
  double threshold = 0.5;
};

/// Multi-label evaluation of one model on one test set. A metric with no
/// valid rows/classes is NaN and its skip count equals the full count.
struct MetricsReport {
  double ranking_loss = 0.0;
  double hamming_loss = 0.0;
  double coverage = 0.0;
  double map = 0.0;
  double macro_auc = 0.0;
  double macro_gbeta = 0.0;

  Vector per_class_ap;
  Vector per_class_auc;
  Vector per_class_gbeta;

  int ranking_rows_skipped = 0;
  int coverage_rows_skipped = 0;
  int map_classes_skipped = 0;
  int auc_classes_skipped = 0;
};

/// Per metric name and orientation ("lower is better" for the first three).
struct MetricInfo {
  const char* name;
  bool higher_is_better;
};
inline constexpr MetricInfo kMetricInfo[6] = {
    {"ranking_loss", false}, {"hamming_loss", false}, {"coverage", false},
    {"map", true},           {"macro_auc", true},     {"macro_gbeta", true},
};
double metric_value(const MetricsReport& r, int metric);

/// Ties between a relevant and an irrelevant label count one half.
double ranking_loss(const ScoreMatrix& sm, int* rows_skipped = nullptr);
/// Fraction of cells where 1[score > threshold] differs from the label.
double hamming_loss(const ScoreMatrix& sm, double threshold = 0.5);
/// Mean 1-based depth (ties take the worst rank) reaching every relevant label.
double coverage(const ScoreMatrix& sm, int* rows_skipped = nullptr);
/// Per class AP = mean over positives of precision at their score threshold.
double mean_average_precision(const ScoreMatrix& sm, Vector* per_class = nullptr, int* classes_skipped = nullptr);
/// Per class P(score_pos > score_neg) + 0.5 P(tie), averaged over classes with both labels.
double macro_auc(const ScoreMatrix& sm, Vector* per_class = nullptr, int* classes_skipped = nullptr);
/// Per class TP / (TP + FN + beta * FP), 0 on an empty denominator; mean over all classes.
double macro_gbeta(const ScoreMatrix& sm, double beta = 2.0, double threshold = 0.5, Vector* per_class = nullptr);

MetricsReport evaluate_metrics(const ScoreMatrix& sm, const MetricOptions& opts = {});

/// Fixed CSV layout: model,dataset,seed,ranking_loss,hamming_loss,coverage,map,macro_auc,macro_gbeta
inline constexpr const char* kMetricsCsvHeader =
    "model,dataset,seed,ranking_loss,hamming_loss,coverage,map,macro_auc,macro_gbeta";
void write_metrics_csv_row(std::ostream& out, const std::string& model, const std::string& dataset,
                           const std::string& seed, const MetricsReport& r);

struct MetricsRow {
  std::string model;
  std::string dataset;
  std::string seed;
  double values[6];
};
/// Parses a file written with kMetricsCsvHeader.
std::vector<MetricsRow> read_metrics_csv(std::istream& in);

}  // namespace ecgmatch
