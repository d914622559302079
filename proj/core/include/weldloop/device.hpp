#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "weldloop/config.hpp"
#include "weldloop/link.hpp"
#include "weldloop/qnet.hpp"
#include "weldloop/weldsim.hpp"

// FPGA-runtime stand-in: owns the installed policy, gates episodes on the OR
// trigger, runs the 80-step act/observe loop and packages the experience.
// Observations and powers are rounded through f32 before they touch the
// environment so the logged payload reconstructs the episode exactly.
namespace weldloop::device {

enum class Mode : std::uint8_t { kTrain = 0, kTest = 1, kRandom = 2 };

struct DeviceError : std::runtime_error {
  DeviceError(link::ControlPayload::Err c, const std::string& what)
      : std::runtime_error(what), code(c) {}
  link::ControlPayload::Err code;
};

struct DeviceCounters {
  std::uint64_t epsilons_consumed = 0;
  std::uint64_t infer_calls = 0;
  std::uint64_t episodes = 0;
  std::uint64_t probes = 0;
};

class DeviceRuntime {
 public:
  DeviceRuntime(const DeviceParams& dp, std::uint64_t seed);

  // Decodes and swaps in a policy. Throws std::invalid_argument on a bad
  // blob or shape, DeviceError on a version decrease.
  std::uint32_t install_weights(const std::vector<std::uint8_t>& blob);
  void install_epsilons(std::uint32_t episode_id, std::vector<float> eps);

  bool has_policy() const { return policy_.has_value(); }
  const qnet::QuantizedPolicy& policy() const { return policy_.value(); }

  // One full episode. Requires installed weights and unconsumed epsilons for
  // this episode id; every mode drains one epsilon per step and performs
  // exactly one inference per step (random mode overrides the action).
  link::ExperiencePayload run_episode(sim::WeldEnv& env, std::uint32_t episode_id, Mode mode);

  const DeviceCounters& counters() const { return counters_; }

 private:
  sim::SensorReading trigger_wait(sim::WeldEnv& env);
  void pace() const;

  DeviceParams dp_;
  std::uint64_t seed_;
  std::optional<qnet::QuantizedPolicy> policy_;
  std::optional<std::pair<std::uint32_t, std::vector<float>>> pending_eps_;
  DeviceCounters counters_;
};

struct DeviceSessionResult {
  std::uint64_t episodes_run = 0;
  bool clean_shutdown = false;
  std::string abort_reason;
  DeviceCounters counters;
};

// Device side of the protocol: consumes WEIGHTS/EPSILONS/CONTROL, runs
// episodes against fresh environments built from cfg, streams EXPERIENCE.
// Recoverable faults answer with CONTROL(error); link faults end the session.
DeviceSessionResult run_device_session(link::FramedConn& conn, const RunConfig& cfg);

}  // namespace weldloop::device
