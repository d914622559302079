#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "weldloop/twin.hpp"

using namespace weldloop;

namespace {

std::vector<twin::Transition> random_batch(int n, std::uint64_t seed, bool with_done = true) {
  std::mt19937_64 rng(seed);
  const auto u = [&](double lo, double hi) {
    return lo + (hi - lo) * (double((rng() >> 11)) * 0x1.0p-53);
  };
  std::vector<twin::Transition> out;
  for (int i = 0; i < n; ++i) {
    twin::Transition t;
    t.obs = {u(0, 10), u(0, 10)};
    t.action_squashed = u(-1, 1);
    t.reward = u(0, 1);
    t.next_obs = {u(0, 10), u(0, 10)};
    t.done = with_done && (i % 7 == 0);
    out.push_back(t);
  }
  return out;
}

// forces a critic to the constant function f(x) = c
void make_constant_critic(twin::Mlp& net, double c) {
  net.params.assign(net.params.size(), 0.0);
  const int last = net.layer_count() - 1;
  net.b(last)[0] = c;
}

SacParams small_params() {
  SacParams p;
  p.batch = 10;
  p.grad_steps = 4;
  return p;
}

}  // namespace

TEST(CriticTarget, GammaZeroGivesRewards) {
  twin::SacLearner learner(small_params(), 1);
  const auto batch = random_batch(12, 5);
  const auto ys = learner.critic_target(batch, 0.0, learner.alpha());
  ASSERT_EQ(ys.size(), batch.size());
  for (std::size_t i = 0; i < ys.size(); ++i) EXPECT_EQ(ys[i], batch[i].reward);
}

TEST(CriticTarget, DoneGivesRewardExactly) {
  twin::SacLearner learner(small_params(), 2);
  std::vector<twin::Transition> batch(3);
  for (auto& t : batch) {
    t.obs = {1, 2};
    t.next_obs = {8, 9};
    t.action_squashed = 0.5;
    t.reward = 0.4;
    t.done = true;
  }
  const auto ys = learner.critic_target(batch, 0.99, 0.7);
  for (double y : ys) EXPECT_EQ(y, 0.4);
}

TEST(CriticTarget, ConstantCriticsHandValue) {
  twin::SacLearner learner(small_params(), 3);
  const double c = 0.7;
  make_constant_critic(learner.q1t, c);
  make_constant_critic(learner.q2t, c);
  twin::Transition t;
  t.obs = {2, 3};
  t.next_obs = {4, 5};
  t.reward = 0.1;
  t.done = false;
  const auto ys = learner.critic_target({t}, 0.99, 0.0);
  ASSERT_EQ(ys.size(), 1u);
  EXPECT_DOUBLE_EQ(ys[0], 0.1 + 0.99 * c);
}

TEST(CriticTarget, MinOfTwoTargets) {
  twin::SacLearner learner(small_params(), 4);
  make_constant_critic(learner.q1t, 2.0);
  make_constant_critic(learner.q2t, -1.0);
  twin::Transition t;
  t.reward = 0.0;
  t.done = false;
  t.obs = {5, 5};
  t.next_obs = {5, 5};
  const auto ys = learner.critic_target({t}, 1.0, 0.0);
  EXPECT_DOUBLE_EQ(ys[0], -1.0);
}

TEST(CriticTarget, FreshEpsilonPerCall) {
  twin::SacLearner learner(small_params(), 5);
  const auto batch = random_batch(8, 6, false);
  const auto y1 = learner.critic_target(batch, 0.99, 0.3);
  const auto y2 = learner.critic_target(batch, 0.99, 0.3);
  EXPECT_NE(y1, y2);  // a' and its log-prob resample every use
}

TEST(CriticTarget, EmptyBatchThrows) {
  twin::SacLearner learner(small_params(), 6);
  EXPECT_THROW(learner.critic_target({}, 0.99, 0.3), std::invalid_argument);
}

TEST(UpdateStep, CriticLossDecreasesOnFixedTarget) {
  // done transitions pin y = r, so the critic regresses a constant and the
  // loss must collapse (no bootstrap sampling noise in the target).
  auto p = small_params();
  p.lr = 1e-2;
  twin::SacLearner learner(p, 7);
  twin::Transition t;
  t.obs = {3.0, 4.0};
  t.action_squashed = 0.25;
  t.reward = 0.6;
  t.next_obs = {3.1, 4.1};
  t.done = true;
  const std::vector<twin::Transition> batch(10, t);
  std::vector<double> c1;
  for (int i = 0; i < 200; ++i) c1.push_back(learner.update_step(batch).critic1);
  EXPECT_LT(c1.back(), 0.02 * c1.front());
  EXPECT_LT(c1.back(), 1e-3);
}

TEST(UpdateStep, TemperatureStepFollowsSign) {
  // d(-log_alpha*(mean_logp+H))/d(log_alpha) = -(mean_logp+H): log_alpha
  // moves up exactly when mean log-prob + target entropy is positive.
  const auto batch = random_batch(10, 8, false);
  {
    twin::SacLearner learner(small_params(), 8);
    learner.p.target_entropy = -2.0;  // mean_logp ~ -0.6 -> negative sum
    const auto l = learner.update_step(batch);
    const double s = -l.entropy + learner.p.target_entropy;
    ASSERT_LT(s, 0);
    EXPECT_LT(learner.log_alpha, 0.0);
  }
  {
    twin::SacLearner learner(small_params(), 8);
    learner.p.target_entropy = 5.0;
    const auto l = learner.update_step(batch);
    const double s = -l.entropy + learner.p.target_entropy;
    ASSERT_GT(s, 0);
    EXPECT_GT(learner.log_alpha, 0.0);
  }
}

TEST(UpdateStep, TemperatureStationaryAtMatchedEntropy) {
  const auto batch = random_batch(10, 9, false);
  twin::SacLearner probe(small_params(), 11);
  const double entropy = probe.update_step(batch).entropy;

  twin::SacLearner learner(small_params(), 11);
  learner.p.target_entropy = entropy;  // gradient -(mean_logp + H) == 0
  learner.update_step(batch);
  EXPECT_DOUBLE_EQ(learner.log_alpha, 0.0);
}

TEST(UpdateStep, AlphaFieldMatchesPostUpdateAlpha) {
  twin::SacLearner learner(small_params(), 12);
  const auto l = learner.update_step(random_batch(10, 13, false));
  EXPECT_DOUBLE_EQ(l.alpha, learner.alpha());
  EXPECT_DOUBLE_EQ(l.alpha, std::exp(learner.log_alpha));
}

TEST(UpdateStep, Tau1MakesTargetsEqualOnline) {
  auto p = small_params();
  p.tau = 1.0;
  twin::SacLearner learner(p, 14);
  learner.update_step(random_batch(10, 15, false));
  EXPECT_EQ(learner.q1t.params, learner.q1.params);
  EXPECT_EQ(learner.q2t.params, learner.q2.params);
}

TEST(UpdateStep, NanLossThrowsWithDiagnostics) {
  // poison the critic's output bias: no ReLU downstream can mask the NaN
  twin::SacLearner learner(small_params(), 16);
  learner.q1.params.back() = std::numeric_limits<double>::quiet_NaN();
  try {
    learner.update_step(random_batch(10, 17, false));
    FAIL() << "expected runtime_error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
  }
  // a non-finite policy weight is refused even earlier, at quantization
  twin::SacLearner learner2(small_params(), 16);
  learner2.policy.params[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(learner2.update_step(random_batch(10, 17, false)), std::invalid_argument);
}

TEST(SacUpdate, GatesOnBufferAndBumpsVersion) {
  twin::SacLearner learner(small_params(), 18);
  EXPECT_EQ(learner.version, 1u);
  EXPECT_THROW(learner.sac_update(), std::invalid_argument);
  for (const auto& t : random_batch(10, 19)) learner.buffer.push(t);
  const auto trace = learner.sac_update();
  EXPECT_EQ(trace.size(), static_cast<std::size_t>(learner.p.grad_steps));
  EXPECT_EQ(learner.version, 2u);
  learner.sac_update();
  EXPECT_EQ(learner.version, 3u);
}

TEST(SacUpdate, ExportCarriesVersion) {
  twin::SacLearner learner(small_params(), 20);
  for (const auto& t : random_batch(10, 21)) learner.buffer.push(t);
  auto blob = learner.export_weights();
  EXPECT_EQ(qnet::decode_policy(blob).version, 1u);
  learner.sac_update();
  blob = learner.export_weights();
  EXPECT_EQ(qnet::decode_policy(blob).version, 2u);
}

TEST(ActorPath, GradCheckThroughHeadAndCritic) {
  // the composite the actor update differentiates: alpha*logp - Q(s, a)
  twin::Mlp policy = twin::make_mlp({2, 8, 2}, 23, 0, 0.8);
  twin::Mlp critic = twin::make_mlp({3, 8, 1}, 23, 1, 0.8);
  const std::vector<double> obs = {0.3, -0.7};
  const double eps = 0.63, alpha = 0.2;

  const auto eval = [&](bool with_grad) {
    const auto tape = twin::forward_float(policy, obs);
    const auto h = twin::head_sample(tape.out[0], tape.out[1], eps);
    const auto qt = twin::forward_float(critic, {obs[0], obs[1], h.a});
    const double loss = alpha * h.logp - qt.out[0];
    if (with_grad) {
      std::vector<double> gin;
      twin::backward(critic, nullptr, qt, {-1.0}, &gin);
      const auto g = twin::head_backward(h, alpha, gin[2], eps);
      twin::backward(policy, nullptr, tape, {g[0], g[1]});
    }
    return loss;
  };
  EXPECT_LT(twin::grad_check(policy, eval), 1e-4);
  EXPECT_LT(twin::grad_check(critic, eval), 1e-4);
}
