#include "ecgmatch/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>

namespace ecgmatch {

void PerformanceTable::validate() const {
  if (values.rows() < 2 || values.cols() < 2)
    throw ConfigError("performance table needs at least 2 datasets and 2 models");
  if (!values.allFinite()) throw ConfigError("performance table has missing or non-finite cells");
}

RankTable rank_models(const PerformanceTable& table) {
  table.validate();
  const Eigen::Index n = table.values.rows();
  const Eigen::Index k = table.values.cols();
  RankTable out{Matrix(n, k), Vector::Zero(k)};
  std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
  for (Eigen::Index d = 0; d < n; ++d) {
    std::iota(order.begin(), order.end(), 0);
    const auto better = [&](Eigen::Index a, Eigen::Index b) {
      return table.higher_is_better ? table.values(d, a) > table.values(d, b)
                                    : table.values(d, a) < table.values(d, b);
    };
    std::sort(order.begin(), order.end(), better);
    for (std::size_t g = 0; g < order.size();) {
      std::size_t end = g;
      while (end < order.size() && table.values(d, order[end]) == table.values(d, order[g])) ++end;
      const double avg = 0.5 * static_cast<double>(g + 1 + end);
      for (std::size_t i = g; i < end; ++i) out.ranks(d, order[i]) = avg;
      g = end;
    }
  }
  out.mean_ranks = out.ranks.colwise().mean().transpose();
  return out;
}

FriedmanResult friedman_statistic(const RankTable& ranks) {
  const double n = static_cast<double>(ranks.ranks.rows());
  const double k = static_cast<double>(ranks.ranks.cols());
  if (n < 2 || k < 2) throw ConfigError("friedman_statistic: need N >= 2 and k >= 2");
  const double sum_sq = ranks.mean_ranks.squaredNorm();
  double chi2 = 12.0 * n / (k * (k + 1.0)) * (sum_sq - k * (k + 1.0) * (k + 1.0) / 4.0);
  // Rounding can leave a tiny negative value for identical ranks.
  if (chi2 < 0.0 && chi2 > -1e-9) chi2 = 0.0;
  const double denom = n * (k - 1.0) - chi2;
  FriedmanResult r;
  r.chi2 = chi2;
  if (std::abs(denom) <= 1e-12 * n * k)
    r.f_f = std::numeric_limits<double>::infinity();
  else
    r.f_f = (n - 1.0) * chi2 / denom;
  return r;
}

double critical_f_value(int k, int n, double alpha) {
  if (k < 2 || n < 2) throw ConfigError("critical_f_value: need k >= 2 and N >= 2");
  boost::math::fisher_f_distribution<double> dist(k - 1, (k - 1) * (n - 1));
  return boost::math::quantile(boost::math::complement(dist, alpha));
}

namespace {

// Index 0 corresponds to k = 2.
constexpr double kQ005[] = {1.960, 2.241, 2.394, 2.498, 2.576, 2.638, 2.690, 2.724, 2.773};
constexpr double kQ010[] = {1.645, 1.960, 2.128, 2.241, 2.326, 2.394, 2.450, 2.498, 2.539};

}  // namespace

double bonferroni_dunn_q(int k, double alpha) {
  if (k < 2 || k > 10) throw ConfigError("bonferroni_dunn_q: k=" + std::to_string(k) + " outside table range 2..10");
  if (std::abs(alpha - 0.05) < 1e-12) return kQ005[k - 2];
  if (std::abs(alpha - 0.10) < 1e-12) return kQ010[k - 2];
  throw ConfigError("bonferroni_dunn_q: alpha must be 0.05 or 0.10");
}

double bonferroni_dunn_q_from_normal(int k, double alpha) {
  if (k < 2) throw ConfigError("bonferroni_dunn_q_from_normal: k must be >= 2");
  boost::math::normal_distribution<double> z;
  return boost::math::quantile(z, 1.0 - alpha / (2.0 * (k - 1)));
}

double bonferroni_dunn_cd(int k, int n, double alpha) {
  if (n < 1) throw ConfigError("bonferroni_dunn_cd: N must be positive");
  const double q = bonferroni_dunn_q(k, alpha);
  return q * std::sqrt(static_cast<double>(k) * (k + 1) / (6.0 * n));
}

std::vector<DunnVerdict> dunn_compare(const RankTable& ranks, int control_index, double cd) {
  const auto k = static_cast<int>(ranks.mean_ranks.size());
  if (control_index < 0 || control_index >= k) throw ContractViolation("dunn_compare: control index out of range");
  std::vector<DunnVerdict> out;
  for (int j = 0; j < k; ++j) {
    if (j == control_index) continue;
    const double diff = std::abs(ranks.mean_ranks(j) - ranks.mean_ranks(control_index));
    out.push_back({j, diff, diff >= cd});
  }
  return out;
}

}  // namespace ecgmatch
