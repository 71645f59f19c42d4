#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ecgmatch/common.hpp"

namespace ecgmatch {

enum class SimilarityKind { cosine, pearson, euclidean };
enum class CorrelationSource { labeled, unlabeled };

SimilarityKind parse_similarity_kind(const std::string& name);
std::string to_string(SimilarityKind kind);

/// C x C label co-occurrence matrix.
struct CorrelationMatrix {
  Matrix values;
  CorrelationSource source = CorrelationSource::labeled;
};

/// Divides every nonzero column by its Euclidean norm; zero columns stay zero.
Matrix normalize_columns(const Matrix& y);

/// Pairwise column similarity matrix under the chosen kind. For cosine this
/// is N(Y)^T N(Y).
Matrix similarity_matrix(const Matrix& y, SimilarityKind kind = SimilarityKind::cosine);

/// Gradient of a scalar loss w.r.t. Y given dLoss/dR for R = similarity_matrix(Y).
Matrix similarity_matrix_backward(const Matrix& y, SimilarityKind kind, const Matrix& grad_r);

/// R_b from a binary label matrix (N_B x C).
CorrelationMatrix correlation_labeled(const Matrix& labels,
                                      SimilarityKind kind = SimilarityKind::cosine);

/// R_u from stacked student predictions (2 B_u x C), rows in [0,1].
CorrelationMatrix correlation_unlabeled(const Matrix& predictions,
                                        SimilarityKind kind = SimilarityKind::cosine);

/// Interleaves rows as [strong_0; weak_0; strong_1; weak_1; ...].
Matrix stack_interleaved(const Matrix& strong, const Matrix& weak);

/// ||A - B||_F.
double frobenius_loss(const Matrix& a, const Matrix& b);
/// d||A - B||_F / dB. Zero when A == B (subgradient choice).
Matrix frobenius_loss_grad_b(const Matrix& a, const Matrix& b);

/// Squared centered cosine of two vectors. Constant input yields 0 and a warning.
double pearson_correlation(const Vector& a, const Vector& b);
/// 1 / (1 + ||a - b||).
double euclidean_correlation(const Vector& a, const Vector& b);
/// sqrt(P(c1=1|c2=1) * P(c2=1|c1=1)) from empirical counts of a binary matrix.
/// A class with no positives yields 0 and a warning.
double conditional_probability_form(const Matrix& labels, int c1, int c2);

/// One header row of class names followed by C rows of values.
void write_correlation_csv(std::ostream& out, const CorrelationMatrix& r,
                           const std::vector<std::string>& class_names);

}  // namespace ecgmatch
