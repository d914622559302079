#pragma once

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "weldloop/config.hpp"
#include "weldloop/device.hpp"
#include "weldloop/link.hpp"

// Server half of the episode exchange: WEIGHTS then EPSILONS then
// CONTROL(start), block for the matching EXPERIENCE.
namespace weldloop::session {

struct SessionError : std::runtime_error {
  enum Kind { kTimeout, kProtocol, kDeviceError, kClosed };
  SessionError(Kind k, const std::string& what, std::uint8_t device_code = 0)
      : std::runtime_error(what), kind(k), device_code(device_code) {}
  Kind kind;
  std::uint8_t device_code;
};

struct ServerCounters {
  std::uint64_t episodes = 0;
  std::uint64_t duplicates = 0;
};

class ServerSession {
 public:
  ServerSession(link::FramedConn& conn, const LinkParams& lp);

  // Full exchange for one episode; duplicate EXPERIENCE frames for episodes
  // already completed are ignored and counted.
  link::ExperiencePayload run_episode(const std::vector<std::uint8_t>& weights,
                                      std::uint32_t episode_id, device::Mode mode,
                                      const std::vector<float>& epsilons);
  void shutdown();

  const ServerCounters& counters() const { return counters_; }

 private:
  link::FramedConn& conn_;
  int timeout_ms_;
  ServerCounters counters_;
  std::set<std::uint32_t> completed_;
};

// Standard-normal epsilons for one episode, f32 as they go on the wire.
std::vector<float> draw_epsilons(std::uint64_t seed, std::uint32_t episode_id, int count);

}  // namespace weldloop::session
