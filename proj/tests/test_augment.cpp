#include <doctest.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <numeric>

#include "ecgmatch/augment.hpp"
#include "ecgmatch/rng.hpp"

using namespace ecgmatch;

namespace {

SignalMatrix ramp(int channels, int length) {
  SignalMatrix s(channels, length);
  for (int c = 0; c < channels; ++c)
    for (int t = 0; t < length; ++t) s(c, t) = 1.0 + c * 100.0 + t;
  return s;
}

SignalMatrix noisy(int channels, int length, std::uint64_t seed) {
  RandomStream r(seed);
  SignalMatrix s(channels, length);
  for (int c = 0; c < channels; ++c)
    for (int t = 0; t < length; ++t) s(c, t) = r.normal();
  return s;
}

}  // namespace

TEST_CASE("dropout with a full-length window zeroes everything") {
  AugmentConfig cfg;
  cfg.dropout_max_frac = 1.0;
  // Width is uniform on [1, L]; with L = 1 the only window is the full signal.
  RandomStream rng(3);
  const auto out = signal_dropout(ramp(4, 1), rng, cfg);
  CHECK(out.data().isZero(0));
}

TEST_CASE("minimal dropout window touches exactly one column") {
  AugmentConfig cfg;
  cfg.dropout_max_frac = 0.01;  // floor(0.01 * 50) = 0, clamped to width 1
  const auto x = ramp(3, 50);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RandomStream rng(seed);
    const auto out = signal_dropout(x, rng, cfg);
    int changed = 0;
    for (int c = 0; c < 3; ++c)
      for (int t = 0; t < 50; ++t) changed += out(c, t) != x(c, t);
    CHECK(changed == 3);
  }
}

TEST_CASE("dropout window matches a replay of the seeded generator") {
  AugmentConfig cfg;
  const auto x = ramp(3, 40);
  RandomStream rng(42);
  const auto out = signal_dropout(x, rng, cfg);

  RandomStream replay(42);
  const auto width = replay.uniform_int(1, 20);
  const auto start = replay.uniform_int(0, 40 - width);
  for (int c = 0; c < 3; ++c)
    for (int t = 0; t < 40; ++t) {
      const bool inside = t >= start && t < start + width;
      CHECK(out(c, t) == (inside ? 0.0 : x(c, t)));
    }
  CHECK(rng.counter() == replay.counter());
}

TEST_CASE("per-channel dropout is confined to one channel") {
  AugmentConfig cfg;
  cfg.dropout_per_channel = true;
  const auto x = ramp(4, 30);
  RandomStream rng(8);
  const auto out = signal_dropout(x, rng, cfg);
  int rows_changed = 0;
  for (int c = 0; c < 4; ++c) rows_changed += out.data().row(c) != x.data().row(c);
  CHECK(rows_changed == 1);
}

TEST_CASE("temporal flip") {
  SignalMatrix s(2, 3);
  s.data() << 1, 2, 3, 4, 5, 6;
  const auto f = temporal_flip(s);
  CHECK(f(0, 0) == 3);
  CHECK(f(0, 2) == 1);
  CHECK(f(1, 0) == 6);
  const auto x = noisy(5, 33, 1);
  CHECK(temporal_flip(temporal_flip(x)) == x);
  SignalMatrix k(3, 7);
  k.data().setConstant(2.5);
  CHECK(temporal_flip(k) == k);
}

TEST_CASE("channel reorganisation permutes rows") {
  const auto x = noisy(6, 20, 2);
  auto checksums = [](const SignalMatrix& s) {
    std::vector<double> v;
    for (long c = 0; c < s.channels(); ++c) v.push_back(s.data().row(c).sum() + 0.37 * s.data().row(c).squaredNorm());
    std::sort(v.begin(), v.end());
    return v;
  };
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RandomStream rng(seed);
    CHECK(checksums(channel_reorganization(x, rng)) == checksums(x));
  }

  const auto two = noisy(2, 5, 3);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RandomStream rng(seed);
    const auto out = channel_reorganization(two, rng);
    const bool same = out == two;
    const bool swapped = out.data().row(0) == two.data().row(1) && out.data().row(1) == two.data().row(0);
    CHECK((same || swapped));
  }
}

TEST_CASE("channel permutation equals a Fisher-Yates replay") {
  const auto x = ramp(7, 4);
  RandomStream rng(42);
  const auto out = channel_reorganization(x, rng);
  RandomStream replay(42);
  std::array<int, 7> perm;
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = 6; i > 0; --i) std::swap(perm[i], perm[replay.uniform_int(0, i)]);
  for (int r = 0; r < 7; ++r) CHECK(out.data().row(r) == x.data().row(perm[r]));
}

TEST_CASE("noise") {
  AugmentConfig cfg;
  const auto x = noisy(4, 50, 4);
  cfg.noise_sigma = 0.0;
  RandomStream r0(1);
  CHECK(random_noise(x, r0, cfg) == x);
  cfg.noise_sigma = 1e-300;
  RandomStream r1(1);
  CHECK(random_noise(x, r1, cfg) == x);

  // Absolute sigma, moments over 100k entries.
  cfg.noise_sigma = 0.3;
  cfg.noise_relative = false;
  SignalMatrix big(10, 10000);
  RandomStream r2(5);
  const auto y = random_noise(big, r2, cfg);
  const double n = static_cast<double>(y.data().size());
  const double mean = y.data().mean();
  const double sd = std::sqrt((y.data().array() - mean).square().sum() / (n - 1));
  CHECK(std::abs(mean) < 3 * 0.3 / std::sqrt(n));
  CHECK(std::abs(sd - 0.3) < 3 * 0.3 / std::sqrt(2 * (n - 1)));

  RandomStream a(77), b(77);
  CHECK(random_noise(x, a, cfg) == random_noise(x, b, cfg));
}

TEST_CASE("weak transform frequencies are uniform") {
  RandomStream rng(2023);
  std::array<int, 5> count{};
  for (int i = 0; i < 4000; ++i) ++count[static_cast<int>(draw_weak_transform(rng))];
  for (int t = 1; t <= 4; ++t) CHECK(std::abs(count[t] / 4000.0 - 0.25) <= 0.03);
}

TEST_CASE("weak augmentation preserves shape and composes") {
  AugmentConfig cfg;
  const auto x = noisy(3, 25, 6);
  RandomStream rng(9);
  for (int i = 0; i < 50; ++i) {
    const auto once = weak_augment(x, rng, cfg);
    const auto twice = weak_augment(once, rng, cfg);
    CHECK(once.channels() == 3);
    CHECK(once.length() == 25);
    CHECK(twice.channels() == 3);
    CHECK(twice.length() == 25);
    CHECK(twice.data().allFinite());
  }
}

TEST_CASE("strong queue contents") {
  AugmentConfig cfg;
  RandomStream rng(10);
  std::array<int, 5> lengths{};
  for (int i = 0; i < 2000; ++i) {
    auto q = draw_strong_queue(rng, cfg);
    ++lengths[q.size()];
    std::sort(q.begin(), q.end());
    CHECK(std::adjacent_find(q.begin(), q.end()) == q.end());
  }
  CHECK(lengths[0] == 0);
  for (int t = 1; t <= 4; ++t) CHECK(lengths[t] > 400);
  cfg.strong_max_transforms = 1;
  for (int i = 0; i < 100; ++i) CHECK(draw_strong_queue(rng, cfg).size() == 1);
}

TEST_CASE("queue application equals manual composition") {
  AugmentConfig cfg;
  const auto x = noisy(5, 40, 11);
  RandomStream rng(12);
  const auto out = apply_queue(
      x, {Transform::temporal_flip, Transform::signal_dropout, Transform::channel_reorganization}, rng, cfg);
  RandomStream manual(12);
  auto y = temporal_flip(x);
  y = signal_dropout(y, manual, cfg);
  y = channel_reorganization(y, manual);
  CHECK(out == y);

  RandomStream s(13);
  for (int i = 0; i < 100; ++i) {
    const auto z = strong_augment(x, s, cfg);
    CHECK(z.channels() == 5);
    CHECK(z.length() == 40);
  }
}

TEST_CASE("augmentation is bit-deterministic per seed") {
  AugmentConfig cfg;
  const auto x = noisy(4, 64, 14);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    RandomStream a(seed), b(seed);
    std::vector<Transform> qa, qb;
    CHECK(strong_augment(x, a, cfg, &qa) == strong_augment(x, b, cfg, &qb));
    CHECK(qa == qb);
    CHECK(weak_augment(x, a, cfg) == weak_augment(x, b, cfg));
  }
}

TEST_CASE("invalid augmentation settings") {
  AugmentConfig cfg;
  cfg.strong_max_transforms = 5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.dropout_max_frac = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
