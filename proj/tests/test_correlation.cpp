#include <doctest.h>

#include <random>
#include <sstream>

#include "ecgmatch/correlation.hpp"
#include "support.hpp"

using namespace ecgmatch;

namespace {

Matrix cols(std::initializer_list<std::initializer_list<double>> columns) {
  const long c = static_cast<long>(columns.size());
  const long n = static_cast<long>(columns.begin()->size());
  Matrix y(n, c);
  long j = 0;
  for (const auto& col : columns) {
    long i = 0;
    for (double v : col) y(i++, j) = v;
    ++j;
  }
  return y;
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<long>(v.size()));
  long i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST_CASE("column normalisation") {
  const Matrix n = normalize_columns(cols({{3, 4}, {0.6, 0.8}, {0, 0}}));
  CHECK(n(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(n(1, 0) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(n(0, 1) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(n(1, 1) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(n.col(2).isZero(0));
}

TEST_CASE("cosine correlation of labels") {
  const auto r = correlation_labeled(cols({{1, 1, 0, 0}, {1, 0, 0, 0}, {0, 0, 1, 1}, {1, 1, 0, 0}}));
  CHECK(r.values(0, 1) == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(r.values(0, 1) == doctest::Approx(std::sqrt(1.0 * 0.5)).epsilon(1e-12));
  CHECK(r.values(0, 2) == 0.0);
  CHECK(r.values(0, 3) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r.values.isApprox(r.values.transpose()));
}

TEST_CASE("count identity on random label matrices") {
  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix y = testing::random_binary(gen, 5 + trial * 3, 5, 0.3);
    for (int c = 0; c < 5; ++c) y(c, c) = 1.0;
    const auto r = correlation_labeled(y);
    for (int a = 0; a < 5; ++a)
      for (int b = 0; b < 5; ++b) {
        CHECK(std::abs(r.values(a, b) - testing::oracle_conditional_form(y, a, b)) <= 1e-12);
        CHECK(std::abs(conditional_probability_form(y, a, b) - r.values(a, b)) <= 1e-12);
      }
  }
}

TEST_CASE("unlabelled correlation") {
  std::mt19937_64 gen(18);
  const Matrix y = testing::random_binary(gen, 30, 4, 0.5);
  CHECK(correlation_unlabeled(y).values == correlation_labeled(y).values);
  CHECK(correlation_unlabeled(y).source == CorrelationSource::unlabeled);

  Matrix one(1, 3);
  one << 0.2, 0.5, 0.9;
  const Matrix r = correlation_unlabeled(one).values;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) CHECK(r(a, b) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(Eigen::FullPivLU<Matrix>(r).rank() == 1);

  const Matrix p = testing::random_scores(gen, 12, 5, false);
  const Matrix rp = correlation_unlabeled(p).values;
  for (int c = 0; c < 5; ++c) CHECK(rp(c, c) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("row duplication and empty rows leave the cosine form unchanged") {
  std::mt19937_64 gen(19);
  const Matrix y = testing::random_binary(gen, 20, 5, 0.5);
  Matrix doubled(40, 5);
  doubled << y, y;
  Matrix padded(26, 5);
  padded << y, Matrix::Zero(6, 5);
  const auto r = correlation_labeled(y).values;
  CHECK(correlation_labeled(doubled).values == r);
  CHECK(correlation_labeled(padded).values == r);
}

TEST_CASE("frobenius loss") {
  Matrix a = Matrix::Zero(2, 2);
  CHECK(frobenius_loss(a, a) == 0.0);
  Matrix b(2, 2);
  b << 0.3, 0, 0, 0.4;
  CHECK(frobenius_loss(a, b) == doctest::Approx(0.5).epsilon(1e-15));
  std::mt19937_64 gen(20);
  const Matrix x = testing::random_scores(gen, 5, 5, false);
  const Matrix z = testing::random_scores(gen, 5, 5, false);
  double sq = 0;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) sq += (x(i, j) - z(i, j)) * (x(i, j) - z(i, j));
  CHECK(frobenius_loss(x, z) == doctest::Approx(std::sqrt(sq)).epsilon(1e-14));
  CHECK(frobenius_loss_grad_b(x, x).isZero(0));
}

TEST_CASE("pearson form") {
  CHECK(pearson_correlation(vec({1, 0, 1, 1, 0}), vec({1, 0, 1, 1, 0})) == doctest::Approx(1.0));
  CHECK(pearson_correlation(vec({1, 0, 1, 1, 0}), vec({0, 1, 0, 0, 1})) == doctest::Approx(1.0));
  CHECK(pearson_correlation(vec({1, 1, 0, 0}), vec({1, 0, 1, 0})) == doctest::Approx(0.0));
}

TEST_CASE("pearson form shifts when empty rows are appended") {
  const Vector a = vec({1, 1, 0, 1});
  const Vector b = vec({1, 0, 1, 1});
  Vector a2(8), b2(8);
  a2 << a, Vector::Zero(4);
  b2 << b, Vector::Zero(4);
  CHECK(std::abs(pearson_correlation(a, b) - pearson_correlation(a2, b2)) > 0.05);
  const Matrix y = (Matrix(4, 2) << a, b).finished();
  const Matrix y2 = (Matrix(8, 2) << a2, b2).finished();
  CHECK(correlation_labeled(y).values == correlation_labeled(y2).values);
}

TEST_CASE("euclidean form") {
  CHECK(euclidean_correlation(vec({1, 0, 1}), vec({1, 0, 1})) == 1.0);
  CHECK(euclidean_correlation(vec({1, 1, 1, 1, 0}), vec({0, 0, 0, 0, 0})) == doctest::Approx(1.0 / 3.0));
  CHECK(euclidean_correlation(vec({1, 0, 0}), vec({0, 1, 0})) ==
        euclidean_correlation(vec({1, 0, 0, 0}), vec({0, 1, 0, 0})));
}

TEST_CASE("conditional form extremes") {
  const Matrix y = cols({{1, 0, 1, 0}, {1, 0, 1, 0}, {0, 1, 0, 1}});
  CHECK(conditional_probability_form(y, 0, 1) == 1.0);
  CHECK(conditional_probability_form(y, 0, 2) == 0.0);
}

TEST_CASE("similarity backward matches finite differences") {
  std::mt19937_64 gen(21);
  const Matrix y = testing::random_scores(gen, 6, 3, false);
  const Matrix w = testing::random_scores(gen, 3, 3, false);
  for (auto kind : {SimilarityKind::cosine, SimilarityKind::pearson, SimilarityKind::euclidean}) {
    const Matrix g = similarity_matrix_backward(y, kind, w);
    Matrix probe = y;
    const double h = 1e-6;
    for (long i = 0; i < y.size(); ++i) {
      const double keep = probe.data()[i];
      probe.data()[i] = keep + h;
      const double up = similarity_matrix(probe, kind).cwiseProduct(w).sum();
      probe.data()[i] = keep - h;
      const double down = similarity_matrix(probe, kind).cwiseProduct(w).sum();
      probe.data()[i] = keep;
      CHECK(g.data()[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-5));
    }
  }
}

TEST_CASE("interleaving and csv output") {
  Matrix s(2, 1), w(2, 1);
  s << 1, 2;
  w << 10, 20;
  const Matrix st = stack_interleaved(s, w);
  CHECK(st(0, 0) == 1);
  CHECK(st(1, 0) == 10);
  CHECK(st(2, 0) == 2);
  CHECK(st(3, 0) == 20);

  std::ostringstream out;
  write_correlation_csv(out, correlation_labeled(cols({{1, 0}, {1, 1}})), {"a", "b"});
  CHECK(out.str().rfind("class,a,b\na,1,", 0) == 0);
  CHECK(parse_similarity_kind("pearson") == SimilarityKind::pearson);
  CHECK_THROWS_AS(parse_similarity_kind("jaccard"), ConfigError);
}
