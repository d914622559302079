#include "weldloop/device.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <thread>

#include "weldloop/rng.hpp"
#include "weldloop/session.hpp"
#include "weldloop/twin.hpp"

using namespace weldloop;
using device::DeviceError;
using device::DeviceRuntime;
using device::Mode;

namespace {

std::vector<std::uint8_t> blob(std::uint32_t version, std::uint64_t seed = 1) {
  return twin::export_weights(twin::make_mlp(qnet::kArtifactDims, seed, 0, 3e-3), version);
}

SimParams noise_off() {
  SimParams p;
  p.noise_scale = 0.0;
  return p;
}

sim::WeldEnv fresh_env(const char* preset, const SimParams& prm, std::uint32_t episode,
                       std::uint64_t seed = 1) {
  return sim::WeldEnv(sim::SurfaceProfile::preset(preset, prm), prm, seed, episode);
}

const std::vector<float> kZeroEps(80, 0.0f);

}  // namespace

TEST(Trigger, FirstProbeFiresOnEveryPresetNoiseFree) {
  const auto prm = noise_off();
  DeviceParams dp;
  DeviceRuntime rt(dp, 1);
  rt.install_weights(blob(1));
  std::uint64_t episodes = 0;
  for (const char* preset : {"brushed", "sandblasted", "mixed"}) {
    auto env = fresh_env(preset, prm, 1);
    rt.install_epsilons(1, kZeroEps);
    const auto payload = rt.run_episode(env, 1, Mode::kTrain);
    ++episodes;
    EXPECT_EQ(rt.counters().probes, episodes) << preset;  // fired on the first probe
    auto ref = fresh_env(preset, prm, 1);
    const auto probe = ref.sense_probe(dp.probe_power, 0);
    EXPECT_EQ(payload.entries[0].or_volts, static_cast<float>(probe.or_volts));
    EXPECT_EQ(payload.entries[0].oe_volts, static_cast<float>(probe.oe_volts));
  }
}

TEST(Trigger, AbortsAfterProbeLimit) {
  const auto prm = noise_off();
  DeviceParams dp;
  dp.trigger_threshold = 0.5;  // cold-plate probe OR stays at 0.175
  DeviceRuntime rt(dp, 1);
  rt.install_weights(blob(1));
  rt.install_epsilons(1, kZeroEps);
  auto env = fresh_env("brushed", prm, 1);
  try {
    rt.run_episode(env, 1, Mode::kTrain);
    FAIL() << "expected trigger abort";
  } catch (const DeviceError& e) {
    EXPECT_EQ(e.code, link::ControlPayload::kErrTrigger);
  }
  EXPECT_EQ(rt.counters().probes, static_cast<std::uint64_t>(dp.probe_limit));
  EXPECT_EQ(rt.counters().infer_calls, 0u);
  EXPECT_EQ(rt.counters().episodes, 0u);
}

TEST(Trigger, ThresholdIsInclusive) {
  const auto prm = noise_off();
  const double probe_or = fresh_env("brushed", prm, 1).sense_probe(25.0, 0).or_volts;

  DeviceParams at;
  at.trigger_threshold = probe_or;  // >= fires exactly at the threshold
  DeviceRuntime rt_at(at, 1);
  rt_at.install_weights(blob(1));
  rt_at.install_epsilons(1, kZeroEps);
  auto env = fresh_env("brushed", prm, 1);
  EXPECT_NO_THROW(rt_at.run_episode(env, 1, Mode::kTrain));
  EXPECT_EQ(rt_at.counters().probes, 1u);

  DeviceParams above;
  above.trigger_threshold = std::nextafter(probe_or, 1e9);
  DeviceRuntime rt_above(above, 1);
  rt_above.install_weights(blob(1));
  rt_above.install_epsilons(1, kZeroEps);
  auto env2 = fresh_env("brushed", prm, 1);
  EXPECT_THROW(rt_above.run_episode(env2, 1, Mode::kTrain), DeviceError);
}

TEST(Modes, ZeroEpsilonTrainMatchesTestTrajectory) {
  SimParams prm;  // noise on: both envs share seed/episode draws
  DeviceParams dp;
  DeviceRuntime ra(dp, 1), rb(dp, 1);
  ra.install_weights(blob(1));
  rb.install_weights(blob(1));
  ra.install_epsilons(4, kZeroEps);
  rb.install_epsilons(4, kZeroEps);
  auto ea = fresh_env("mixed", prm, 4, 9);
  auto eb = fresh_env("mixed", prm, 4, 9);
  const auto train = ra.run_episode(ea, 4, Mode::kTrain);
  const auto test = rb.run_episode(eb, 4, Mode::kTest);
  EXPECT_FALSE(train.is_test());
  EXPECT_TRUE(test.is_test());
  ASSERT_EQ(train.entries.size(), test.entries.size());
  for (std::size_t i = 0; i < train.entries.size(); ++i) {
    EXPECT_EQ(train.entries[i].or_volts, test.entries[i].or_volts) << i;
    EXPECT_EQ(train.entries[i].oe_volts, test.entries[i].oe_volts) << i;
    EXPECT_EQ(train.entries[i].action_squashed, test.entries[i].action_squashed) << i;
    EXPECT_EQ(train.entries[i].power_watts, test.entries[i].power_watts) << i;
  }
}

TEST(Modes, RandomPowersUniformAndReproducible) {
  const auto prm = noise_off();
  const std::uint64_t seed = 3;
  DeviceParams dp;
  DeviceRuntime rt(dp, seed);
  rt.install_weights(blob(1));
  double sum = 0, lo = 1e9, hi = -1e9;
  const int episodes = 1250;  // 1e5 draws
  for (int e = 1; e <= episodes; ++e) {
    rt.install_epsilons(static_cast<std::uint32_t>(e), kZeroEps);
    auto env = fresh_env("brushed", prm, static_cast<std::uint32_t>(e), seed);
    const auto payload = rt.run_episode(env, static_cast<std::uint32_t>(e), Mode::kRandom);
    for (int t = 0; t < 80; ++t) {
      const double p = payload.entries[static_cast<std::size_t>(t)].power_watts;
      sum += p;
      lo = std::min(lo, p);
      hi = std::max(hi, p);
    }
  }
  const double mean = sum / (episodes * 80.0);
  EXPECT_NEAR(mean, 62.5, 0.5);
  EXPECT_GE(lo, 25.0);
  EXPECT_LE(hi, 100.0);
  EXPECT_LT(lo, 26.5);  // both tails actually visited
  EXPECT_GT(hi, 98.5);

  // draws come from the explore stream, keyed by (seed, episode, t)
  DeviceRuntime again(dp, seed);
  again.install_weights(blob(1));
  again.install_epsilons(1, kZeroEps);
  auto env = fresh_env("brushed", prm, 1, seed);
  const auto payload = again.run_episode(env, 1, Mode::kRandom);
  for (int t = 0; t < 80; ++t) {
    const float want = static_cast<float>(
        25.0 + 75.0 * rng::uniform01(rng::key(seed, rng::kExplore, 1,
                                              static_cast<std::uint64_t>(t))));
    EXPECT_EQ(payload.entries[static_cast<std::size_t>(t)].power_watts, want) << t;
    EXPECT_EQ(payload.entries[static_cast<std::size_t>(t)].action_squashed,
              static_cast<float>(qnet::squashed_from_power(static_cast<double>(want))));
  }
}

TEST(Modes, OneInferencePerStepEveryMode) {
  const auto prm = noise_off();  // exactly one trigger probe per episode
  DeviceParams dp;
  DeviceRuntime rt(dp, 1);
  rt.install_weights(blob(1));
  std::uint32_t id = 1;
  for (const Mode mode : {Mode::kTrain, Mode::kTest, Mode::kRandom}) {
    rt.install_epsilons(id, kZeroEps);
    auto env = fresh_env("brushed", prm, id);
    rt.run_episode(env, id, mode);
    ++id;
  }
  EXPECT_EQ(rt.counters().infer_calls, 240u);
  EXPECT_EQ(rt.counters().epsilons_consumed, 240u);
  EXPECT_EQ(rt.counters().episodes, 3u);
  EXPECT_EQ(rt.counters().probes, 3u);
}

TEST(Epsilons, SingleUseWrongIdAndCountChecks) {
  SimParams prm;
  DeviceParams dp;
  DeviceRuntime rt(dp, 1);
  rt.install_weights(blob(1));
  rt.install_epsilons(5, kZeroEps);
  auto env = fresh_env("brushed", prm, 5);
  EXPECT_NO_THROW(rt.run_episode(env, 5, Mode::kTrain));

  auto env2 = fresh_env("brushed", prm, 5);
  try {
    rt.run_episode(env2, 5, Mode::kTrain);  // consumed: retransmits need fresh ones
    FAIL() << "expected bad-state";
  } catch (const DeviceError& e) {
    EXPECT_EQ(e.code, link::ControlPayload::kErrBadState);
  }

  rt.install_epsilons(6, kZeroEps);
  auto env3 = fresh_env("brushed", prm, 7);
  try {
    rt.run_episode(env3, 7, Mode::kTrain);  // id mismatch
    FAIL() << "expected bad-state";
  } catch (const DeviceError& e) {
    EXPECT_EQ(e.code, link::ControlPayload::kErrBadState);
  }

  rt.install_epsilons(8, std::vector<float>(79, 0.0f));
  auto env4 = fresh_env("brushed", prm, 8);
  try {
    rt.run_episode(env4, 8, Mode::kTrain);  // one epsilon short
    FAIL() << "expected protocol error";
  } catch (const DeviceError& e) {
    EXPECT_EQ(e.code, link::ControlPayload::kErrProtocol);
  }
}

TEST(Weights, VersionMonotoneEqualAllowed) {
  DeviceParams dp;
  DeviceRuntime rt(dp, 1);
  EXPECT_EQ(rt.install_weights(blob(5)), 5u);
  EXPECT_EQ(rt.install_weights(blob(5, 2)), 5u);  // equal version: allowed
  try {
    rt.install_weights(blob(4));
    FAIL() << "expected bad-state";
  } catch (const DeviceError& e) {
    EXPECT_EQ(e.code, link::ControlPayload::kErrBadState);
  }
  EXPECT_EQ(rt.policy().version, 5u);
  EXPECT_THROW(
      rt.install_weights(twin::export_weights(twin::make_mlp({2, 8, 2}, 1, 0, 3e-3), 9)),
      std::invalid_argument);  // wrong network shape
}

TEST(Weights, EpisodeWithoutWeightsIsBadState) {
  SimParams prm;
  DeviceParams dp;
  DeviceRuntime rt(dp, 1);
  rt.install_epsilons(1, kZeroEps);
  auto env = fresh_env("brushed", prm, 1);
  try {
    rt.run_episode(env, 1, Mode::kTrain);
    FAIL() << "expected bad-state";
  } catch (const DeviceError& e) {
    EXPECT_EQ(e.code, link::ControlPayload::kErrBadState);
  }
}

namespace {

struct SessionHarness {
  link::LoopbackPair pair = link::make_loopback();
  link::FramedConn server;
  std::thread th;
  device::DeviceSessionResult result;

  explicit SessionHarness(const RunConfig& cfg) : server(pair.a) {
    th = std::thread([this, cfg] {
      link::FramedConn dev(pair.b);
      result = device::run_device_session(dev, cfg);
    });
  }
  ~SessionHarness() {
    if (th.joinable()) th.join();
  }
};

RunConfig session_cfg() {
  RunConfig cfg;
  cfg.surface = "brushed";
  cfg.seed = 1;
  cfg.link.timeout_ms = 5000;
  return cfg;
}

}  // namespace

TEST(DeviceSession, EpsilonsBeforeWeightsGetBadState) {
  SessionHarness h(session_cfg());
  link::EpsilonsPayload ep;
  ep.episode_id = 1;
  ep.eps = std::vector<float>(80, 0.0f);
  h.server.send(link::MsgType::kEpsilons, link::encode_epsilons(ep));
  const auto f = h.server.recv(5000);
  ASSERT_TRUE(f.has_value());
  ASSERT_EQ(f->type, link::MsgType::kControl);
  const auto cp = link::decode_control(f->payload);
  EXPECT_EQ(cp.cmd, link::ControlPayload::kError);
  EXPECT_EQ(cp.arg, link::ControlPayload::kErrBadState);
  link::ControlPayload bye;
  bye.cmd = link::ControlPayload::kShutdown;
  h.server.send(link::MsgType::kControl, link::encode_control(bye));
  h.th.join();
  EXPECT_TRUE(h.result.clean_shutdown);
  EXPECT_EQ(h.result.episodes_run, 0u);
}

TEST(DeviceSession, ExperienceToDeviceIsProtocolError) {
  SessionHarness h(session_cfg());
  link::ExperiencePayload xp;
  xp.episode_id = 3;
  xp.entries.resize(2);
  h.server.send(link::MsgType::kExperience, link::encode_experience(xp));
  const auto f = h.server.recv(5000);
  ASSERT_TRUE(f.has_value());
  const auto cp = link::decode_control(f->payload);
  EXPECT_EQ(cp.cmd, link::ControlPayload::kError);
  EXPECT_EQ(cp.arg, link::ControlPayload::kErrProtocol);
  link::ControlPayload bye;
  bye.cmd = link::ControlPayload::kShutdown;
  h.server.send(link::MsgType::kControl, link::encode_control(bye));
  h.th.join();
  EXPECT_TRUE(h.result.clean_shutdown);
}

TEST(DeviceSession, InvalidModeArgRejected) {
  SessionHarness h(session_cfg());
  h.server.send(link::MsgType::kWeights, blob(1));
  link::ControlPayload start;
  start.cmd = link::ControlPayload::kStartEpisode;
  start.episode_id = 1;
  start.arg = 7;  // no such mode
  h.server.send(link::MsgType::kControl, link::encode_control(start));
  const auto f = h.server.recv(5000);
  ASSERT_TRUE(f.has_value());
  const auto cp = link::decode_control(f->payload);
  EXPECT_EQ(cp.cmd, link::ControlPayload::kError);
  EXPECT_EQ(cp.arg, link::ControlPayload::kErrProtocol);
  link::ControlPayload bye;
  bye.cmd = link::ControlPayload::kShutdown;
  h.server.send(link::MsgType::kControl, link::encode_control(bye));
  h.th.join();
  EXPECT_TRUE(h.result.clean_shutdown);
}

TEST(DeviceSession, HappyPathThreeEpisodesVersionBumps) {
  const RunConfig cfg = session_cfg();
  SessionHarness h(cfg);
  session::ServerSession sess(h.server, cfg.link);
  for (std::uint32_t e = 1; e <= 3; ++e) {
    const auto payload = sess.run_episode(blob(e), e, e == 3 ? Mode::kTest : Mode::kTrain,
                                          session::draw_epsilons(cfg.seed, e, 80));
    EXPECT_EQ(payload.episode_id, e);
    ASSERT_EQ(payload.entries.size(), 81u);
    EXPECT_EQ(payload.step_count(), 80u);
    EXPECT_EQ(payload.is_test(), e == 3);
    EXPECT_EQ(payload.entries[80].action_squashed, 0.0f);  // terminal entry: obs only
    EXPECT_EQ(payload.entries[80].power_watts, 0.0f);
    for (int t = 0; t < 80; ++t) {
      const auto& en = payload.entries[static_cast<std::size_t>(t)];
      EXPECT_GE(en.power_watts, 25.0f);
      EXPECT_LE(en.power_watts, 100.0f);
    }
  }
  sess.shutdown();
  h.th.join();
  EXPECT_TRUE(h.result.clean_shutdown);
  EXPECT_EQ(h.result.episodes_run, 3u);
  EXPECT_EQ(h.result.counters.episodes, 3u);
  EXPECT_EQ(h.result.counters.epsilons_consumed, 240u);
  EXPECT_EQ(h.result.counters.infer_calls, 240u);
  EXPECT_TRUE(h.result.abort_reason.empty());
}

TEST(DeviceSession, TriggerAbortKeepsSessionAlive) {
  RunConfig cfg = session_cfg();
  cfg.device.trigger_threshold = 11.0;  // OR clamps at 10 V: never fires
  SessionHarness h(cfg);
  session::ServerSession sess(h.server, cfg.link);
  try {
    sess.run_episode(blob(1), 1, Mode::kTrain, session::draw_epsilons(cfg.seed, 1, 80));
    FAIL() << "expected device error";
  } catch (const session::SessionError& e) {
    EXPECT_EQ(e.kind, session::SessionError::kDeviceError);
    EXPECT_EQ(e.device_code, link::ControlPayload::kErrTrigger);
  }
  sess.shutdown();  // the session survives a per-episode fault
  h.th.join();
  EXPECT_TRUE(h.result.clean_shutdown);
  EXPECT_EQ(h.result.episodes_run, 0u);
  EXPECT_EQ(h.result.counters.probes, 100u);
}
