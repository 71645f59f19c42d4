#include "ecgmatch/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace ecgmatch {

SignalMatrix::SignalMatrix(Matrix data) : data_(std::move(data)) {}
SignalMatrix::SignalMatrix(Eigen::Index channels, Eigen::Index length) : data_(Matrix::Zero(channels, length)) {}

void AugmentConfig::validate() const {
  if (!(dropout_max_frac > 0.0 && dropout_max_frac <= 1.0))
    throw ConfigError("augment: dropout_max_frac must be in (0,1]");
  if (!(noise_sigma > 0.0)) throw ConfigError("augment: noise_sigma must be positive");
  if (strong_max_transforms < 1 || strong_max_transforms > 4)
    throw ConfigError("augment: strong_max_transforms must be in [1,4]");
}

std::string to_string(Transform t) {
  switch (t) {
    case Transform::signal_dropout: return "signal_dropout";
    case Transform::temporal_flip: return "temporal_flip";
    case Transform::channel_reorganization: return "channel_reorganization";
    case Transform::random_noise: return "random_noise";
  }
  return "?";
}

SignalMatrix signal_dropout(const SignalMatrix& x, RandomStream& rng, const AugmentConfig& cfg) {
  SignalMatrix out = x;
  const Eigen::Index len = x.length();
  if (len == 0) return out;
  const auto max_width = std::max<std::int64_t>(
      1, static_cast<std::int64_t>(std::floor(cfg.dropout_max_frac * static_cast<double>(len))));
  const std::int64_t width = rng.uniform_int(1, max_width);
  const std::int64_t start = rng.uniform_int(0, len - width);
  if (cfg.dropout_per_channel) {
    const std::int64_t ch = rng.uniform_int(0, x.channels() - 1);
    out.data().block(ch, start, 1, width).setZero();
  } else {
    out.data().middleCols(start, width).setZero();
  }
  return out;
}

SignalMatrix temporal_flip(const SignalMatrix& x) { return SignalMatrix(Matrix(x.data().rowwise().reverse())); }

SignalMatrix channel_reorganization(const SignalMatrix& x, RandomStream& rng) {
  const Eigen::Index n = x.channels();
  if (n < 2) {
    warn("channel_reorganization: fewer than 2 channels, returning input unchanged");
    return x;
  }
  std::vector<Eigen::Index> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (Eigen::Index i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(0, i)]);
  SignalMatrix out(n, x.length());
  for (Eigen::Index r = 0; r < n; ++r) out.data().row(r) = x.data().row(perm[r]);
  return out;
}

SignalMatrix random_noise(const SignalMatrix& x, RandomStream& rng, const AugmentConfig& cfg) {
  SignalMatrix out = x;
  for (Eigen::Index c = 0; c < x.channels(); ++c) {
    double sigma = cfg.noise_sigma;
    if (cfg.noise_relative) {
      const auto row = x.data().row(c).array();
      const double mean = row.mean();
      sigma *= std::sqrt((row - mean).square().mean());
    }
    for (Eigen::Index t = 0; t < x.length(); ++t) out(c, t) += sigma * rng.normal();
  }
  return out;
}

SignalMatrix apply_transform(const SignalMatrix& x, Transform t, RandomStream& rng, const AugmentConfig& cfg) {
  switch (t) {
    case Transform::signal_dropout: return signal_dropout(x, rng, cfg);
    case Transform::temporal_flip: return temporal_flip(x);
    case Transform::channel_reorganization: return channel_reorganization(x, rng);
    case Transform::random_noise: return random_noise(x, rng, cfg);
  }
  throw ContractViolation("unknown transform");
}

SignalMatrix apply_queue(const SignalMatrix& x, const std::vector<Transform>& queue, RandomStream& rng,
                         const AugmentConfig& cfg) {
  SignalMatrix out = x;
  for (Transform t : queue) out = apply_transform(out, t, rng, cfg);
  return out;
}

Transform draw_weak_transform(RandomStream& rng) { return static_cast<Transform>(rng.uniform_int(1, 4)); }

std::vector<Transform> draw_strong_queue(RandomStream& rng, const AugmentConfig& cfg) {
  const auto count = rng.uniform_int(1, cfg.strong_max_transforms);
  std::array<int, 4> ids{1, 2, 3, 4};
  for (int i = 3; i > 0; --i) std::swap(ids[i], ids[rng.uniform_int(0, i)]);
  std::vector<Transform> queue;
  for (std::int64_t i = 0; i < count; ++i) queue.push_back(static_cast<Transform>(ids[i]));
  return queue;
}

SignalMatrix weak_augment(const SignalMatrix& x, RandomStream& rng, const AugmentConfig& cfg, Transform* chosen) {
  const Transform t = draw_weak_transform(rng);
  if (chosen) *chosen = t;
  return apply_transform(x, t, rng, cfg);
}

SignalMatrix strong_augment(const SignalMatrix& x, RandomStream& rng, const AugmentConfig& cfg,
                            std::vector<Transform>* queue) {
  const auto q = draw_strong_queue(rng, cfg);
  if (queue) *queue = q;
  return apply_queue(x, q, rng, cfg);
}

}  // namespace ecgmatch
