#include <gtest/gtest.h>

#include <cmath>

#include "clinembed/error.hpp"
#include "clinembed/optim.hpp"

using namespace clinembed;

TEST(Adam, FirstStepMovesByLearningRate) {
  // With bias correction the first update is lr * g / (|g| + eps') = lr * sign(g).
  Tensor p = Tensor::vector({1.0, -2.0, 0.5});
  const Tensor g = Tensor::vector({0.3, -4.0, 0.0});
  AdamState state;
  adam_step(p, g, state, {0.1, 0.9, 0.999, 1e-8});
  EXPECT_NEAR(p[0], 0.9, 1e-7);
  EXPECT_NEAR(p[1], -1.9, 1e-7);
  EXPECT_EQ(p[2], 0.5);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, MatchesHandComputedSecondStep) {
  const AdamConfig c{0.01, 0.9, 0.999, 1e-8};
  Tensor p = Tensor::vector({0.0});
  AdamState state;
  adam_step(p, Tensor::vector({1.0}), state, c);
  adam_step(p, Tensor::vector({-2.0}), state, c);
  double m = 0.0, v = 0.0, x = 0.0;
  for (int t = 1; t <= 2; ++t) {
    const double g = t == 1 ? 1.0 : -2.0;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    x -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
  }
  EXPECT_NEAR(p[0], x, 1e-12);
}

TEST(Adam, MinimisesQuadratic) {
  Tensor p = Tensor::vector({5.0, -3.0});
  AdamState state;
  for (int i = 0; i < 2000; ++i) {
    Tensor g = Tensor::vector({2.0 * (p[0] - 1.0), 2.0 * (p[1] + 1.0)});
    adam_step(p, g, state, {0.05, 0.9, 0.999, 1e-8});
  }
  EXPECT_NEAR(p[0], 1.0, 1e-3);
  EXPECT_NEAR(p[1], -1.0, 1e-3);
}

TEST(Adam, RejectsBadInputs) {
  Tensor p = Tensor::vector({1.0});
  AdamState state;
  EXPECT_THROW(adam_step(p, Tensor::vector({1.0}), state, {0.0}), ConfigError);
  EXPECT_THROW(adam_step(p, Tensor::vector({1.0, 2.0}), state, {0.1}), ShapeError);
}

TEST(Adam, SkipsFrozenBindings) {
  Tensor trained = Tensor::vector({1.0});
  Tensor frozen = Tensor::vector({1.0});
  Tape tape;
  ParamBinder binder(tape);
  const Var a = binder.bind("a", trained);
  const Var b = binder.bind("b", frozen, false);
  const GradientMap g = backward(tape, sum_all(mul(a, b)));
  Adam adam({0.1});
  adam.step(binder, g);
  EXPECT_NEAR(trained[0], 0.9, 1e-7);
  EXPECT_EQ(frozen[0], 1.0);
}
