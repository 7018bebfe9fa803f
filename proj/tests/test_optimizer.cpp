#include <gtest/gtest.h>

#include <cmath>

#include "aaformer/optimizer.h"

using namespace aaformer;

TEST(LrSchedule, WarmupThenStepDecay) {
  const LrSchedule s;
  EXPECT_DOUBLE_EQ(s.at(0), 3.5e-5);
  EXPECT_DOUBLE_EQ(s.at(1), (3.5e-5 + 3.5e-4) / 2);
  EXPECT_DOUBLE_EQ(s.at(2), 3.5e-4);
  EXPECT_DOUBLE_EQ(s.at(7.99), 3.5e-4);
  EXPECT_NEAR(s.at(8), 3.5e-5, 1e-20);
  EXPECT_NEAR(s.at(13.5), 3.5e-5, 1e-20);
  EXPECT_NEAR(s.at(14), 3.5e-6, 1e-21);
  EXPECT_NEAR(s.at(100), 3.5e-6, 1e-21);
}

TEST(LrSchedule, FromConfig) {
  TrainConfig t;
  t.base_lr = 1e-3;
  t.warmup_start_lr = 0;
  t.warmup_epochs = 0;
  t.decay_epochs = {1};
  t.decay_factor = 0.5;
  const auto s = LrSchedule::from_config(t);
  EXPECT_DOUBLE_EQ(s.at(0), 1e-3);
  EXPECT_DOUBLE_EQ(s.at(1), 5e-4);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParameterStore store;
  store.add("w", Tensor::from({3}, {0.5, -1.0, 2.0}));
  store.ensure_grads();
  Adam opt;
  for (int i = 0; i < 5; ++i) opt.step(store, 1e-2);
  EXPECT_EQ(store.get("w").data()[0], 0.5);
  EXPECT_EQ(store.get("w").data()[1], -1.0);
  EXPECT_EQ(store.get("w").data()[2], 2.0);
  EXPECT_EQ(opt.state().step, 5u);
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  ParameterStore store;
  store.add("w", Tensor::from({2}, {0.5, 0.5}));
  store.ensure_grads();
  store.get("w").mutable_grad()[0] = 0.1;
  store.get("w").mutable_grad()[1] = -3.0;
  Adam opt(0.9, 0.999, 1e-8);
  opt.step(store, 1e-3);
  EXPECT_NEAR(store.get("w").data()[0], 0.5 - 1e-3 * 0.1 / (0.1 + 1e-8), 1e-15);
  EXPECT_NEAR(store.get("w").data()[1], 0.5 + 1e-3 * 3.0 / (3.0 + 1e-8), 1e-15);
}

TEST(Adam, MatchesReferenceRecurrence) {
  ParameterStore store;
  store.add("w", Tensor::from({1}, {1.0}));
  store.ensure_grads();
  Adam opt(0.9, 0.999, 1e-8);
  double w = 1.0, m = 0, v = 0;
  for (int t = 1; t <= 20; ++t) {
    const double g = 2 * w;  // d/dw of w^2
    store.get("w").mutable_grad()[0] = 2 * store.get("w").data()[0];
    opt.step(store, 0.05);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    w -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(store.get("w").data()[0], w, 1e-14);
  }
}

TEST(Adam, StateRestoreContinuesIdentically) {
  auto make = [] {
    ParameterStore s;
    s.add("a", Tensor::from({2}, {1.0, -2.0}));
    s.ensure_grads();
    return s;
  };
  auto run = [](ParameterStore& s, Adam& opt, int steps) {
    for (int i = 0; i < steps; ++i) {
      s.get("a").mutable_grad()[0] = std::sin(s.get("a").data()[0]);
      s.get("a").mutable_grad()[1] = s.get("a").data()[1];
      opt.step(s, 0.01);
    }
  };
  auto s1 = make();
  Adam o1;
  run(s1, o1, 6);
  auto s2 = make();
  Adam o2;
  run(s2, o2, 3);
  Adam o3;
  o3.set_state(o2.state());
  run(s2, o3, 3);
  EXPECT_EQ(s1.get("a").data()[0], s2.get("a").data()[0]);
  EXPECT_EQ(s1.get("a").data()[1], s2.get("a").data()[1]);
}
