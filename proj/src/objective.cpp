#include "ecgmatch/objective.hpp"

#include <cmath>
#include <optional>

namespace ecgmatch {

LossBreakdown evaluate_objective(const ModelConfig& cfg, const ParameterSet& params,
                                 const ObjectiveInputs& in, ParameterSet* grad) {
  if (!in.labeled_inputs || !in.labels) throw ContractViolation("objective: labeled batch required");
  in.weights.validate();
  LossBreakdown out;
  if (grad) *grad = params.zeros_like();

  const ForwardCache labeled = forward_cached(cfg, params, *in.labeled_inputs);
  out.lb = bce_supervised(labeled.probs, *in.labels);
  if (grad) grad->add_scaled(backward_from_logits(cfg, params, labeled, bce_grad_logits(labeled.probs, *in.labels, nullptr)), 1.0);

  const bool want_u = in.use_unsupervised && in.strong_inputs && in.pseudo_labels && in.agreement;
  const bool want_f = in.use_alignment && in.strong_inputs && in.weak_inputs && in.reference_correlation;

  std::optional<ForwardCache> strong;
  if (want_u || want_f) strong = forward_cached(cfg, params, *in.strong_inputs);

  // Gradient of the strong-branch loss w.r.t. its logits, accumulated from
  // L_u and L_f before a single backward pass.
  Matrix strong_grad_logits;
  bool strong_grad = false;

  if (want_u) {
    out.lu = bce_weighted_unsupervised(strong->probs, *in.pseudo_labels, *in.agreement);
    if (grad && in.weights.lambda_u != 0.0) {
      strong_grad_logits = in.weights.lambda_u * bce_grad_logits(strong->probs, *in.pseudo_labels, in.agreement);
      strong_grad = true;
    }
  }

  if (want_f) {
    const ForwardCache weak = forward_cached(cfg, params, *in.weak_inputs);
    const Matrix stacked = stack_interleaved(strong->probs, weak.probs);
    const Matrix r_u = similarity_matrix(stacked, in.similarity);
    out.lf = frobenius_loss(*in.reference_correlation, r_u);
    if (grad && in.weights.lambda_f != 0.0) {
      const Matrix grad_r = in.weights.lambda_f * frobenius_loss_grad_b(*in.reference_correlation, r_u);
      const Matrix grad_stacked = similarity_matrix_backward(stacked, in.similarity, grad_r);
      const Eigen::Index n = strong->probs.rows();
      Matrix grad_strong_probs(n, stacked.cols()), grad_weak_probs(n, stacked.cols());
      for (Eigen::Index i = 0; i < n; ++i) {
        grad_strong_probs.row(i) = grad_stacked.row(2 * i);
        grad_weak_probs.row(i) = grad_stacked.row(2 * i + 1);
      }
      grad->add_scaled(backward_from_probs(cfg, params, weak, grad_weak_probs), 1.0);
      const Matrix& p = strong->probs;
      Matrix from_f = grad_strong_probs.cwiseProduct(p.cwiseProduct((1.0 - p.array()).matrix()));
      if (strong_grad) {
        strong_grad_logits += from_f;
      } else {
        strong_grad_logits = std::move(from_f);
        strong_grad = true;
      }
    }
  }

  if (grad && strong_grad) grad->add_scaled(backward_from_logits(cfg, params, *strong, strong_grad_logits), 1.0);

  out.total = total_loss(out.lb, out.lu, out.lf, in.weights);
  if (!std::isfinite(out.total))
    throw NumericError("non-finite loss: L_b=" + std::to_string(out.lb) + " L_u=" + std::to_string(out.lu) +
                       " L_f=" + std::to_string(out.lf));
  if (grad) check_finite_gradient(*grad);
  return out;
}

}  // namespace ecgmatch
