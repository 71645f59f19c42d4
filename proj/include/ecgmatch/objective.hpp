#pragma once

#include "ecgmatch/correlation.hpp"
#include "ecgmatch/nn.hpp"

namespace ecgmatch {

/// Inputs of L = L_b + lambda_u * L_u + lambda_f * L_f for one mini-batch.
/// Pointers left null switch the corresponding term off. Pseudo-labels and
/// agreement weights are treated as constants.
struct ObjectiveInputs {
  const Matrix* labeled_inputs = nullptr;   // weak(x_b), preprocessed
  const Matrix* labels = nullptr;           // y_b
  const Matrix* strong_inputs = nullptr;    // g(x_u), preprocessed
  const Matrix* weak_inputs = nullptr;      // w(x_u), preprocessed
  const Matrix* pseudo_labels = nullptr;    // y_hat_u
  const Matrix* agreement = nullptr;        // alpha
  const Matrix* reference_correlation = nullptr;  // R_b
  SimilarityKind similarity = SimilarityKind::cosine;
  LossWeights weights;
  /// Compute L_u (needs strong inputs, pseudo labels, agreement).
  bool use_unsupervised = true;
  /// Compute L_f (needs strong + weak inputs and R_b).
  bool use_alignment = true;
};

struct LossBreakdown {
  double lb = 0.0;
  double lu = 0.0;
  double lf = 0.0;
  double total = 0.0;
};

/// Evaluates the composed loss and, when grad is non-null, its analytic
/// gradient w.r.t. params. Terms whose weight is zero contribute no
/// gradient computation at all.
LossBreakdown evaluate_objective(const ModelConfig& cfg, const ParameterSet& params,
                                 const ObjectiveInputs& in, ParameterSet* grad);

}  // namespace ecgmatch
