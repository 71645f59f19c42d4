#pragma once

#include <string>
#include <vector>

#include "ecgmatch/common.hpp"

namespace ecgmatch {

/// Datasets x models performance values for one metric.
struct PerformanceTable {
  Matrix values;
  bool higher_is_better = true;
  void validate() const;
};

struct RankTable {
  Matrix ranks;       // N x k, 1 = best, ties averaged
  Vector mean_ranks;  // k
};

struct FriedmanResult {
  double chi2 = 0.0;
  double f_f = 0.0;  // +inf when chi2 == N (k - 1)
};

/// Critical value printed in the published comparison table for k=8, N=4
/// at the 0.05 level. Kept verbatim; it does not equal the F(7, 21)
/// quantile, which critical_f_value() computes independently.
inline constexpr double kPublishedFriedmanCriticalValue = 3.2590;

RankTable rank_models(const PerformanceTable& table);
FriedmanResult friedman_statistic(const RankTable& ranks);
/// Upper-alpha quantile of F(k-1, (k-1)(N-1)).
double critical_f_value(int k, int n, double alpha = 0.05);

/// Two-tailed Bonferroni-Dunn critical value q_alpha for k models
/// (k = 2..10, alpha in {0.05, 0.10}); values from Demsar (2006), Table 5b.
double bonferroni_dunn_q(int k, double alpha = 0.05);
/// The same constant derived as the normal quantile z_{1 - alpha / (2 (k - 1))}.
double bonferroni_dunn_q_from_normal(int k, double alpha = 0.05);
/// CD = q_alpha(k) * sqrt(k (k + 1) / (6 N)).
double bonferroni_dunn_cd(int k, int n, double alpha = 0.05);

struct DunnVerdict {
  int model = 0;
  double rank_difference = 0.0;  // |mean_rank_j - mean_rank_control|
  bool significant = false;
};

/// One verdict per model other than the control; significant when the
/// rank difference reaches the critical difference.
std::vector<DunnVerdict> dunn_compare(const RankTable& ranks, int control_index, double cd);

}  // namespace ecgmatch
