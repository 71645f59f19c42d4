#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecgmatch/common.hpp"
#include "ecgmatch/nn.hpp"

namespace ecgmatch {

enum class DistanceKind { cosine, euclidean };

DistanceKind parse_distance_kind(const std::string& name);
std::string to_string(DistanceKind d);

struct KnnConfig {
  int k = 10;
  DistanceKind distance = DistanceKind::cosine;
  /// Drop the query's own bank row from its neighbour list.
  bool exclude_self = false;
};

/// Teacher-side stores for every unlabeled sample: feature bank Z and
/// prediction bank P. Row i of both always describes unlabeled sample i.
struct MemoryBanks {
  Matrix features;     // N_U x d
  Matrix predictions;  // N_U x C
  std::vector<bool> filled;

  Eigen::Index size() const { return features.rows(); }
  bool all_filled() const;
};

struct Neighbor {
  Eigen::Index index;
  double distance;
};

/// One full teacher pass over the (already weakly augmented and
/// preprocessed) unlabeled inputs.
MemoryBanks bank_init(const ModelConfig& cfg, const ParameterSet& teacher, const Matrix& weak_inputs);

/// Overwrites rows `indices` with the teacher's outputs on `batch`
/// (row j of batch belongs to indices[j]). Later duplicates win.
void bank_update(MemoryBanks& banks, std::span<const Eigen::Index> indices, const ModelConfig& cfg,
                 const ParameterSet& teacher, const Matrix& batch);
/// Same, with features/predictions already computed.
void bank_write(MemoryBanks& banks, std::span<const Eigen::Index> indices, const Matrix& features,
                const Matrix& predictions);

double feature_distance(const Vector& a, const Vector& b, DistanceKind kind);

/// K nearest bank rows to query, ascending distance, ties by lower index.
/// `self` names the query's own row for exclude_self.
std::vector<Neighbor> knn_query(const MemoryBanks& banks, const Vector& query, const KnnConfig& cfg,
                                std::optional<Eigen::Index> self = std::nullopt);

/// Stacks the prediction-bank rows of the neighbours (K x C).
Matrix gather_predictions(const MemoryBanks& banks, const std::vector<Neighbor>& neighbors);

/// Columnwise mean of the neighbour predictions.
Vector soft_vote(const Matrix& neighbor_preds);
/// |2/K * sum_k p^{k,c} - 1| per class.
Vector neighbor_agreement(const Matrix& neighbor_preds);

struct PseudoLabels {
  Matrix values;     // n x C
  Matrix agreement;  // n x C
};

/// Pseudo-labels and agreement for every row of `queries` (student features).
PseudoLabels generate_pseudo_labels(const MemoryBanks& banks, const Matrix& queries, const KnnConfig& cfg,
                                    std::span<const Eigen::Index> self_indices = {});

void save_banks(const std::string& path, const MemoryBanks& banks);
MemoryBanks load_banks(const std::string& path);

}  // namespace ecgmatch
