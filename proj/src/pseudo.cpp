#include "ecgmatch/pseudo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace ecgmatch {

DistanceKind parse_distance_kind(const std::string& name) {
  if (name == "cosine") return DistanceKind::cosine;
  if (name == "euclidean") return DistanceKind::euclidean;
  throw ConfigError("unknown distance kind '" + name + "'");
}

std::string to_string(DistanceKind d) { return d == DistanceKind::cosine ? "cosine" : "euclidean"; }

bool MemoryBanks::all_filled() const {
  return std::all_of(filled.begin(), filled.end(), [](bool b) { return b; });
}

MemoryBanks bank_init(const ModelConfig& cfg, const ParameterSet& teacher, const Matrix& weak_inputs) {
  if (weak_inputs.rows() == 0) throw ConfigError("bank_init: unlabeled set is empty");
  ForwardResult r = forward(cfg, teacher, weak_inputs);
  MemoryBanks banks;
  banks.features = std::move(r.features);
  banks.predictions = std::move(r.probs);
  banks.filled.assign(static_cast<std::size_t>(weak_inputs.rows()), true);
  return banks;
}

void bank_write(MemoryBanks& banks, std::span<const Eigen::Index> indices, const Matrix& features,
                const Matrix& predictions) {
  if (features.rows() != static_cast<Eigen::Index>(indices.size()) ||
      predictions.rows() != static_cast<Eigen::Index>(indices.size()))
    throw ContractViolation("bank_write: row count does not match index count");
  for (Eigen::Index idx : indices)
    if (idx < 0 || idx >= banks.size())
      throw ContractViolation("bank_write: index " + std::to_string(idx) + " out of range");
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const Eigen::Index i = indices[j];
    banks.features.row(i) = features.row(static_cast<Eigen::Index>(j));
    banks.predictions.row(i) = predictions.row(static_cast<Eigen::Index>(j));
    banks.filled[static_cast<std::size_t>(i)] = true;
  }
}

void bank_update(MemoryBanks& banks, std::span<const Eigen::Index> indices, const ModelConfig& cfg,
                 const ParameterSet& teacher, const Matrix& batch) {
  if (indices.empty()) return;
  if (batch.rows() != static_cast<Eigen::Index>(indices.size()))
    throw ContractViolation("bank_update: batch rows do not match index count");
  for (Eigen::Index idx : indices)
    if (idx < 0 || idx >= banks.size())
      throw ContractViolation("bank_update: index " + std::to_string(idx) + " out of range");
  const ForwardResult r = forward(cfg, teacher, batch);
  bank_write(banks, indices, r.features, r.probs);
}

double feature_distance(const Vector& a, const Vector& b, DistanceKind kind) {
  if (kind == DistanceKind::euclidean) return (a - b).norm();
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - a.dot(b) / (na * nb);
}

std::vector<Neighbor> knn_query(const MemoryBanks& banks, const Vector& query, const KnnConfig& cfg,
                                std::optional<Eigen::Index> self) {
  const Eigen::Index n = banks.size();
  const bool drop_self = cfg.exclude_self && self.has_value();
  const Eigen::Index available = drop_self ? n - 1 : n;
  if (cfg.k < 1 || cfg.k > available)
    throw ConfigError("knn_query: k=" + std::to_string(cfg.k) + " but only " + std::to_string(available) +
                      " bank rows are available");
  if (query.size() != banks.features.cols()) throw ContractViolation("knn_query: query dimension mismatch");

  std::vector<Neighbor> all;
  all.reserve(static_cast<std::size_t>(n));
  if (cfg.distance == DistanceKind::cosine) {
    const double qn = query.norm();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (drop_self && i == *self) continue;
      const double rn = banks.features.row(i).norm();
      const double dot = banks.features.row(i).dot(query.transpose());
      const double d = (qn == 0.0 || rn == 0.0) ? 1.0 : 1.0 - dot / (qn * rn);
      all.push_back({i, d});
    }
  } else {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (drop_self && i == *self) continue;
      all.push_back({i, (banks.features.row(i).transpose() - query).norm()});
    }
  }
  const auto closer = [](const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
  };
  std::partial_sort(all.begin(), all.begin() + cfg.k, all.end(), closer);
  all.resize(static_cast<std::size_t>(cfg.k));
  return all;
}

Matrix gather_predictions(const MemoryBanks& banks, const std::vector<Neighbor>& neighbors) {
  Matrix out(static_cast<Eigen::Index>(neighbors.size()), banks.predictions.cols());
  for (std::size_t k = 0; k < neighbors.size(); ++k)
    out.row(static_cast<Eigen::Index>(k)) = banks.predictions.row(neighbors[k].index);
  return out;
}

Vector soft_vote(const Matrix& neighbor_preds) {
  if (neighbor_preds.rows() == 0) throw ContractViolation("soft_vote: no neighbours");
  return neighbor_preds.colwise().mean().transpose();
}

Vector neighbor_agreement(const Matrix& neighbor_preds) {
  if (neighbor_preds.rows() == 0) throw ContractViolation("neighbor_agreement: no neighbours");
  const double k = static_cast<double>(neighbor_preds.rows());
  const Vector sums = neighbor_preds.colwise().sum().transpose();
  return sums.unaryExpr([k](double s) { return std::abs(2.0 * s / k - 1.0); });
}

PseudoLabels generate_pseudo_labels(const MemoryBanks& banks, const Matrix& queries, const KnnConfig& cfg,
                                    std::span<const Eigen::Index> self_indices) {
  PseudoLabels out{Matrix(queries.rows(), banks.predictions.cols()),
                   Matrix(queries.rows(), banks.predictions.cols())};
  for (Eigen::Index i = 0; i < queries.rows(); ++i) {
    std::optional<Eigen::Index> self;
    if (!self_indices.empty()) self = self_indices[static_cast<std::size_t>(i)];
    const auto nn = knn_query(banks, queries.row(i).transpose(), cfg, self);
    const Matrix preds = gather_predictions(banks, nn);
    out.values.row(i) = soft_vote(preds).transpose();
    out.agreement.row(i) = neighbor_agreement(preds).transpose();
  }
  return out;
}

void save_banks(const std::string& path, const MemoryBanks& banks) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  Vector mask(banks.size());
  for (Eigen::Index i = 0; i < banks.size(); ++i) mask(i) = banks.filled[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
  write_records(out, {{banks.features, mask}, {banks.predictions, mask}});
}

MemoryBanks load_banks(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  auto records = read_records(in);
  if (records.size() != 2 || records[0].matrix.rows() != records[1].matrix.rows())
    throw ParseError("bank checkpoint must hold two records with equal row counts", 0);
  MemoryBanks banks;
  banks.features = std::move(records[0].matrix);
  banks.predictions = std::move(records[1].matrix);
  banks.filled.resize(static_cast<std::size_t>(banks.features.rows()));
  for (Eigen::Index i = 0; i < banks.features.rows(); ++i)
    banks.filled[static_cast<std::size_t>(i)] = records[0].vector(i) != 0.0;
  return banks;
}

}  // namespace ecgmatch
