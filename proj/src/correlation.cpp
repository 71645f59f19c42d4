#include "ecgmatch/correlation.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

namespace ecgmatch {

SimilarityKind parse_similarity_kind(const std::string& name) {
  if (name == "cosine") return SimilarityKind::cosine;
  if (name == "pearson") return SimilarityKind::pearson;
  if (name == "euclidean") return SimilarityKind::euclidean;
  throw ConfigError("unknown similarity kind '" + name + "'");
}

std::string to_string(SimilarityKind kind) {
  switch (kind) {
    case SimilarityKind::cosine: return "cosine";
    case SimilarityKind::pearson: return "pearson";
    case SimilarityKind::euclidean: return "euclidean";
  }
  return "?";
}

Matrix normalize_columns(const Matrix& y) {
  Matrix out = y;
  for (Eigen::Index c = 0; c < y.cols(); ++c) {
    const double norm = y.col(c).norm();
    if (norm > 0.0) out.col(c) /= norm;
  }
  return out;
}

namespace {

Matrix center_columns(const Matrix& y) {
  Matrix out = y;
  if (y.rows() == 0) return out;
  out.rowwise() -= y.colwise().mean();
  return out;
}

// Backprop through x -> x / ||x|| column-wise.
Matrix normalize_columns_backward(const Matrix& y, const Matrix& normalized, const Matrix& grad) {
  Matrix out = Matrix::Zero(y.rows(), y.cols());
  for (Eigen::Index c = 0; c < y.cols(); ++c) {
    const double norm = y.col(c).norm();
    if (norm == 0.0) continue;
    const double proj = normalized.col(c).dot(grad.col(c));
    out.col(c) = (grad.col(c) - normalized.col(c) * proj) / norm;
  }
  return out;
}

Matrix pairwise_euclidean(const Matrix& y) {
  const Eigen::Index c = y.cols();
  Matrix r(c, c);
  for (Eigen::Index i = 0; i < c; ++i) {
    r(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < c; ++j) {
      const double d = (y.col(i) - y.col(j)).norm();
      r(i, j) = r(j, i) = 1.0 / (1.0 + d);
    }
  }
  return r;
}

}  // namespace

Matrix similarity_matrix(const Matrix& y, SimilarityKind kind) {
  switch (kind) {
    case SimilarityKind::cosine: {
      // Gram form: binary inputs give integer counts, so duplicating rows
      // scales numerator and sqrt(G_ii G_jj) by exactly 2.
      const Matrix g = y.transpose() * y;
      Matrix r(g.rows(), g.cols());
      for (Eigen::Index i = 0; i < g.rows(); ++i)
        for (Eigen::Index j = 0; j < g.cols(); ++j) {
          const double d = g(i, i) * g(j, j);
          r(i, j) = d > 0.0 ? g(i, j) / std::sqrt(d) : 0.0;
        }
      return r;
    }
    case SimilarityKind::pearson: {
      const Matrix n = normalize_columns(center_columns(y));
      const Matrix s = n.transpose() * n;
      return s.cwiseProduct(s);
    }
    case SimilarityKind::euclidean:
      return pairwise_euclidean(y);
  }
  throw ConfigError("unknown similarity kind");
}

Matrix similarity_matrix_backward(const Matrix& y, SimilarityKind kind, const Matrix& grad_r) {
  if (grad_r.rows() != y.cols() || grad_r.cols() != y.cols())
    throw ContractViolation("similarity_matrix_backward: gradient shape mismatch");
  switch (kind) {
    case SimilarityKind::cosine: {
      const Matrix n = normalize_columns(y);
      const Matrix grad_n = n * (grad_r + grad_r.transpose());
      return normalize_columns_backward(y, n, grad_n);
    }
    case SimilarityKind::pearson: {
      const Matrix centered = center_columns(y);
      const Matrix n = normalize_columns(centered);
      const Matrix s = n.transpose() * n;
      const Matrix grad_s = 2.0 * s.cwiseProduct(grad_r);
      const Matrix grad_n = n * (grad_s + grad_s.transpose());
      Matrix grad_c = normalize_columns_backward(centered, n, grad_n);
      // Centering is a projection: subtract the column mean of the gradient.
      if (grad_c.rows() > 0) grad_c.rowwise() -= grad_c.colwise().mean();
      return grad_c;
    }
    case SimilarityKind::euclidean: {
      Matrix out = Matrix::Zero(y.rows(), y.cols());
      for (Eigen::Index i = 0; i < y.cols(); ++i) {
        for (Eigen::Index j = 0; j < y.cols(); ++j) {
          if (i == j) continue;
          const Vector diff = y.col(i) - y.col(j);
          const double d = diff.norm();
          if (d == 0.0) continue;
          const double g = grad_r(i, j) + grad_r(j, i);
          // Each unordered pair is visited twice; halve to count it once.
          const double coeff = -0.5 * g / ((1.0 + d) * (1.0 + d) * d);
          out.col(i) += coeff * diff;
          out.col(j) -= coeff * diff;
        }
      }
      return out;
    }
  }
  throw ConfigError("unknown similarity kind");
}

CorrelationMatrix correlation_labeled(const Matrix& labels, SimilarityKind kind) {
  return {similarity_matrix(labels, kind), CorrelationSource::labeled};
}

CorrelationMatrix correlation_unlabeled(const Matrix& predictions, SimilarityKind kind) {
  if (predictions.rows() < 1)
    throw ContractViolation("correlation_unlabeled: need at least one prediction row");
  return {similarity_matrix(predictions, kind), CorrelationSource::unlabeled};
}

Matrix stack_interleaved(const Matrix& strong, const Matrix& weak) {
  if (strong.rows() != weak.rows() || strong.cols() != weak.cols())
    throw ContractViolation("stack_interleaved: shape mismatch");
  Matrix out(2 * strong.rows(), strong.cols());
  for (Eigen::Index i = 0; i < strong.rows(); ++i) {
    out.row(2 * i) = strong.row(i);
    out.row(2 * i + 1) = weak.row(i);
  }
  return out;
}

double frobenius_loss(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ContractViolation("frobenius_loss: shape mismatch");
  return (a - b).norm();
}

Matrix frobenius_loss_grad_b(const Matrix& a, const Matrix& b) {
  const double norm = frobenius_loss(a, b);
  if (norm == 0.0) return Matrix::Zero(a.rows(), a.cols());
  return (b - a) / norm;
}

double pearson_correlation(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw ContractViolation("pearson_correlation: length mismatch");
  const Vector ca = a.array() - a.mean();
  const Vector cb = b.array() - b.mean();
  const double na = ca.norm();
  const double nb = cb.norm();
  if (na == 0.0 || nb == 0.0) {
    warn("pearson_correlation: constant column, correlation undefined; returning 0");
    return 0.0;
  }
  const double rho = ca.dot(cb) / (na * nb);
  return rho * rho;
}

double euclidean_correlation(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw ContractViolation("euclidean_correlation: length mismatch");
  return 1.0 / (1.0 + (a - b).norm());
}

double conditional_probability_form(const Matrix& labels, int c1, int c2) {
  double both = 0.0, n1 = 0.0, n2 = 0.0;
  for (Eigen::Index i = 0; i < labels.rows(); ++i) {
    const bool a = labels(i, c1) > 0.5;
    const bool b = labels(i, c2) > 0.5;
    n1 += a;
    n2 += b;
    both += a && b;
  }
  if (n1 == 0.0 || n2 == 0.0) {
    warn("conditional_probability_form: class without positives; returning 0");
    return 0.0;
  }
  return std::sqrt((both / n2) * (both / n1));
}

void write_correlation_csv(std::ostream& out, const CorrelationMatrix& r,
                           const std::vector<std::string>& class_names) {
  const auto c = r.values.rows();
  out << "class";
  for (Eigen::Index j = 0; j < c; ++j)
    out << ',' << (j < static_cast<Eigen::Index>(class_names.size()) ? class_names[j] : "c" + std::to_string(j));
  out << '\n';
  char buf[64];
  for (Eigen::Index i = 0; i < c; ++i) {
    out << (i < static_cast<Eigen::Index>(class_names.size()) ? class_names[i] : "c" + std::to_string(i));
    for (Eigen::Index j = 0; j < c; ++j) {
      std::snprintf(buf, sizeof buf, "%.12g", r.values(i, j));
      out << ',' << buf;
    }
    out << '\n';
  }
}

}  // namespace ecgmatch
