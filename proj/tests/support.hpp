#pragma once
// Shared fixtures and brute-force reference implementations. The oracles
// here are written straight from the metric definitions with plain loops
// and deliberately share no code with the library.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "ecgmatch/common.hpp"

namespace testing {

using ecgmatch::Matrix;
using ecgmatch::Vector;

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto base = std::filesystem::temp_directory_path();
    for (;;) {
      path_ = base / ("ecgmatch_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
      if (std::filesystem::create_directory(path_)) break;
    }
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

/// Rough [0,1) scores with a few deliberate ties (quantised to 1/20).
inline Matrix random_scores(std::mt19937_64& gen, int n, int c, bool quantise) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix s(n, c);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) s(i, j) = quantise ? std::floor(u(gen) * 20.0) / 20.0 : u(gen);
  return s;
}

inline Matrix random_binary(std::mt19937_64& gen, int n, int c, double p = 0.4) {
  std::bernoulli_distribution b(p);
  Matrix y(n, c);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) y(i, j) = b(gen) ? 1.0 : 0.0;
  return y;
}

// ---- metric oracles -------------------------------------------------------

inline double oracle_ranking_loss(const Matrix& s, const Matrix& y) {
  double total = 0.0;
  int rows = 0;
  for (int i = 0; i < s.rows(); ++i) {
    double bad = 0.0;
    int pairs = 0;
    for (int r = 0; r < s.cols(); ++r) {
      if (y(i, r) != 1.0) continue;
      for (int q = 0; q < s.cols(); ++q) {
        if (y(i, q) != 0.0) continue;
        ++pairs;
        if (s(i, r) < s(i, q)) bad += 1.0;
        else if (s(i, r) == s(i, q)) bad += 0.5;
      }
    }
    if (pairs == 0) continue;
    total += bad / pairs;
    ++rows;
  }
  return rows ? total / rows : std::nan("");
}

inline double oracle_hamming(const Matrix& s, const Matrix& y, double threshold) {
  int wrong = 0;
  for (int i = 0; i < s.rows(); ++i)
    for (int j = 0; j < s.cols(); ++j) wrong += ((s(i, j) > threshold ? 1.0 : 0.0) != y(i, j));
  return static_cast<double>(wrong) / static_cast<double>(s.size());
}

inline double oracle_coverage(const Matrix& s, const Matrix& y) {
  double total = 0.0;
  int rows = 0;
  for (int i = 0; i < s.rows(); ++i) {
    int depth = 0;
    bool any = false;
    for (int c = 0; c < s.cols(); ++c) {
      if (y(i, c) != 1.0) continue;
      any = true;
      int rank = 0;
      for (int j = 0; j < s.cols(); ++j) rank += s(i, j) >= s(i, c);
      depth = std::max(depth, rank);
    }
    if (!any) continue;
    total += depth;
    ++rows;
  }
  return rows ? total / rows : std::nan("");
}

inline double oracle_map(const Matrix& s, const Matrix& y) {
  double total = 0.0;
  int classes = 0;
  for (int c = 0; c < s.cols(); ++c) {
    double ap = 0.0;
    int pos = 0;
    for (int i = 0; i < s.rows(); ++i) {
      if (y(i, c) != 1.0) continue;
      ++pos;
      int above = 0, above_pos = 0;
      for (int j = 0; j < s.rows(); ++j)
        if (s(j, c) >= s(i, c)) {
          ++above;
          above_pos += y(j, c) == 1.0;
        }
      ap += static_cast<double>(above_pos) / above;
    }
    if (pos == 0) continue;
    total += ap / pos;
    ++classes;
  }
  return classes ? total / classes : std::nan("");
}

inline double oracle_auc(const Matrix& s, const Matrix& y) {
  double total = 0.0;
  int classes = 0;
  for (int c = 0; c < s.cols(); ++c) {
    double wins = 0.0;
    int pairs = 0;
    for (int p = 0; p < s.rows(); ++p) {
      if (y(p, c) != 1.0) continue;
      for (int q = 0; q < s.rows(); ++q) {
        if (y(q, c) != 0.0) continue;
        ++pairs;
        wins += s(p, c) > s(q, c) ? 1.0 : (s(p, c) == s(q, c) ? 0.5 : 0.0);
      }
    }
    if (pairs == 0) continue;
    total += wins / pairs;
    ++classes;
  }
  return classes ? total / classes : std::nan("");
}

inline double oracle_gbeta(const Matrix& s, const Matrix& y, double beta, double threshold) {
  double total = 0.0;
  for (int c = 0; c < s.cols(); ++c) {
    double tp = 0, fn = 0, fp = 0;
    for (int i = 0; i < s.rows(); ++i) {
      const bool pred = s(i, c) > threshold;
      const bool truth = y(i, c) == 1.0;
      tp += pred && truth;
      fn += !pred && truth;
      fp += pred && !truth;
    }
    const double den = tp + fn + beta * fp;
    total += den > 0 ? tp / den : 0.0;
  }
  return total / static_cast<double>(s.cols());
}

/// Co-occurrence form sqrt(P(a|b) P(b|a)) from raw counts.
inline double oracle_conditional_form(const Matrix& y, int a, int b) {
  double na = 0, nb = 0, nab = 0;
  for (int i = 0; i < y.rows(); ++i) {
    na += y(i, a);
    nb += y(i, b);
    nab += y(i, a) * y(i, b);
  }
  return std::sqrt((nab / nb) * (nab / na));
}

// ---- nearest neighbours ------------------------------------------------------

struct OracleNeighbor {
  long index;
  double distance;
};

/// Every distance computed, then a stable sort on distance alone so that ties
/// keep the lower index first.
inline std::vector<OracleNeighbor> oracle_knn(const Matrix& bank, const Vector& q, int k, bool cosine,
                                              long self = -1) {
  std::vector<OracleNeighbor> all;
  for (long i = 0; i < bank.rows(); ++i) {
    if (i == self) continue;
    double d = 0.0;
    if (cosine) {
      double dot = 0, nq = 0, nr = 0;
      for (long j = 0; j < q.size(); ++j) {
        dot += bank(i, j) * q(j);
        nq += q(j) * q(j);
        nr += bank(i, j) * bank(i, j);
      }
      d = (nq == 0 || nr == 0) ? 1.0 : 1.0 - dot / (std::sqrt(nq) * std::sqrt(nr));
    } else {
      for (long j = 0; j < q.size(); ++j) d += (bank(i, j) - q(j)) * (bank(i, j) - q(j));
      d = std::sqrt(d);
    }
    all.push_back({i, d});
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const OracleNeighbor& a, const OracleNeighbor& b) { return a.distance < b.distance; });
  all.resize(static_cast<std::size_t>(k));
  return all;
}

// ---- forward pass -------------------------------------------------------------

/// Straight-line dense layer: out[i][o] = b[o] + sum_j w[o][j] * x[i][j].
inline Matrix oracle_dense(const Matrix& x, const Matrix& w, const Vector& b) {
  Matrix out(x.rows(), w.rows());
  for (long i = 0; i < x.rows(); ++i)
    for (long o = 0; o < w.rows(); ++o) {
      double acc = b(o);
      for (long j = 0; j < x.cols(); ++j) acc += w(o, j) * x(i, j);
      out(i, o) = acc;
    }
  return out;
}

}  // namespace testing

