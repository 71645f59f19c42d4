#include <doctest.h>

#include "ecgmatch/objective.hpp"
#include "gradcheck.hpp"

using namespace ecgmatch;

TEST_CASE("analytic gradient agrees with central differences") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto f = testing::make_gradcheck_fixture(seed);
    CHECK(testing::max_gradient_relative_error(f, LossWeights{0.8, 0.8}) < 1e-4);
    CHECK(testing::max_gradient_relative_error(f, LossWeights{0.0, 0.0}) < 1e-4);
    CHECK(testing::max_gradient_relative_error(f, LossWeights{1.3, 0.0}) < 1e-4);
    CHECK(testing::max_gradient_relative_error(f, LossWeights{0.0, 1.6}) < 1e-4);
  }
}

TEST_CASE("loss breakdown composes exactly") {
  const auto f = testing::make_gradcheck_fixture(5);
  auto in = f.inputs();
  in.weights = LossWeights{0.8, 0.4};
  const auto r = evaluate_objective(f.model, f.params, in, nullptr);
  CHECK(r.lu > 0);
  CHECK(r.lf > 0);
  CHECK(r.total == r.lb + 0.8 * r.lu + 0.4 * r.lf);
}

TEST_CASE("unsupervised gradient is linear in its weight") {
  const auto f = testing::make_gradcheck_fixture(6);
  auto grad_with = [&](double lu) {
    auto in = f.inputs();
    in.weights = LossWeights{lu, 0.0};
    ParameterSet g;
    evaluate_objective(f.model, f.params, in, &g);
    return g;
  };
  const auto g0 = grad_with(0.0);
  auto d1 = grad_with(0.5);
  d1.add_scaled(g0, -1.0);
  auto d2 = grad_with(1.0);
  d2.add_scaled(g0, -1.0);
  d1.scale(2.0);
  d2.add_scaled(d1, -1.0);
  CHECK(std::sqrt(d2.squared_norm()) < 1e-12);
}

TEST_CASE("switched-off terms are not evaluated") {
  const auto f = testing::make_gradcheck_fixture(7);
  auto in = f.inputs();
  in.use_unsupervised = false;
  in.use_alignment = false;
  const auto r = evaluate_objective(f.model, f.params, in, nullptr);
  CHECK(r.lu == 0.0);
  CHECK(r.lf == 0.0);
  CHECK(r.total == r.lb);

  auto in2 = f.inputs();
  in2.labels = nullptr;
  CHECK_THROWS_AS(evaluate_objective(f.model, f.params, in2, nullptr), ContractViolation);
}
