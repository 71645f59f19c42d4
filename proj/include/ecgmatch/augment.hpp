#pragma once

#include <string>
#include <vector>

#include "ecgmatch/common.hpp"
#include "ecgmatch/rng.hpp"

namespace ecgmatch {

/// One multi-channel recording: channels x length.
class SignalMatrix {
 public:
  SignalMatrix() = default;
  explicit SignalMatrix(Matrix data);
  SignalMatrix(Eigen::Index channels, Eigen::Index length);

  Eigen::Index channels() const { return data_.rows(); }
  Eigen::Index length() const { return data_.cols(); }
  const Matrix& data() const { return data_; }
  Matrix& data() { return data_; }
  double operator()(Eigen::Index c, Eigen::Index t) const { return data_(c, t); }
  double& operator()(Eigen::Index c, Eigen::Index t) { return data_(c, t); }

  bool operator==(const SignalMatrix& other) const { return data_ == other.data_; }

 private:
  Matrix data_;
};

struct AugmentConfig {
  /// Longest dropout window as a fraction of the signal length.
  double dropout_max_frac = 0.5;
  /// Zero one random channel instead of all channels.
  bool dropout_per_channel = false;
  /// Noise standard deviation; relative to each channel's std when noise_relative.
  double noise_sigma = 0.1;
  bool noise_relative = true;
  /// Upper bound T on the strong queue length, in [1, 4].
  int strong_max_transforms = 4;

  void validate() const;
};

/// Transform ids follow the order in which they are usually listed:
/// 1 dropout, 2 flip, 3 channel reorganisation, 4 noise.
enum class Transform { signal_dropout = 1, temporal_flip = 2, channel_reorganization = 3, random_noise = 4 };

std::string to_string(Transform t);

SignalMatrix signal_dropout(const SignalMatrix& x, RandomStream& rng, const AugmentConfig& cfg);
SignalMatrix temporal_flip(const SignalMatrix& x);
SignalMatrix channel_reorganization(const SignalMatrix& x, RandomStream& rng);
SignalMatrix random_noise(const SignalMatrix& x, RandomStream& rng, const AugmentConfig& cfg);

SignalMatrix apply_transform(const SignalMatrix& x, Transform t, RandomStream& rng, const AugmentConfig& cfg);
/// Applies the queue front to back, all draws taken from rng in order.
SignalMatrix apply_queue(const SignalMatrix& x, const std::vector<Transform>& queue, RandomStream& rng,
                         const AugmentConfig& cfg);

/// One transform chosen uniformly.
Transform draw_weak_transform(RandomStream& rng);
/// T ~ Uniform{1..strong_max_transforms}, then T distinct transforms in random order.
std::vector<Transform> draw_strong_queue(RandomStream& rng, const AugmentConfig& cfg);

SignalMatrix weak_augment(const SignalMatrix& x, RandomStream& rng, const AugmentConfig& cfg,
                          Transform* chosen = nullptr);
SignalMatrix strong_augment(const SignalMatrix& x, RandomStream& rng, const AugmentConfig& cfg,
                            std::vector<Transform>* queue = nullptr);

}  // namespace ecgmatch
