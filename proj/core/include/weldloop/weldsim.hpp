#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "weldloop/config.hpp"

// Surrogate weld physics: a latent melt proxy with keyhole hysteresis drives
// the two photodiode voltages. OR rises with melt until the keyhole opens and
// traps the light; roughness scatters reflection and raises absorption.
namespace weldloop::sim {

enum class SurfaceKind { kBrushed, kSandblasted };

struct Segment {
  double length_mm = 0;
  double sa_um = 0;
  double noise_sd_volts = 0;
  SurfaceKind kind = SurfaceKind::kBrushed;
};

struct SurfaceProfile {
  std::vector<Segment> segments;

  // "brushed", "sandblasted" or "mixed"; noise levels come from params.
  static SurfaceProfile preset(const std::string& name, const SimParams& params);
  static SurfaceProfile from_segments(const std::vector<SegmentSpec>& specs);

  const Segment& at(double x_mm) const;  // clamps past the end
  double total_length_mm() const;
};

// Builds the profile a RunConfig describes (custom segments win over preset).
SurfaceProfile profile_from_config(const RunConfig& cfg);

struct SensorReading {
  double or_volts = 0;
  double oe_volts = 0;
};

inline double reward(const SensorReading& r) { return r.or_volts / 10.0; }

struct WeldState {
  int t = 0;
  double m = 0;
  bool keyhole = false;
};

class WeldEnv {
 public:
  static constexpr int kSteps = 80;

  WeldEnv(SurfaceProfile profile, const SimParams& params, std::uint64_t seed,
          std::uint32_t episode);

  // Advances one 10 ms step. Throws on power out of [25,100] or t >= 80.
  SensorReading step(double power_watts);

  // Read-only sensing at the current melt state (the pre-trigger probe);
  // draws its noise from a separate stream so probes never perturb episode
  // noise. Does not advance the state.
  SensorReading sense_probe(double power_watts, int probe_index) const;

  const WeldState& state() const { return st_; }
  bool done() const { return st_.t >= kSteps; }
  const SurfaceProfile& profile() const { return profile_; }

 private:
  SurfaceProfile profile_;
  SimParams prm_;
  std::uint64_t seed_;
  std::uint32_t episode_;
  WeldState st_;
};

// Melt/keyhole replay from a commanded power sequence: the latent dynamics
// are noise-free, so the flags reconstruct a logged episode exactly.
std::vector<bool> replay_keyhole(const SurfaceProfile& profile, const SimParams& params,
                                 const std::vector<double>& powers);

struct StepRecord {
  SensorReading obs;
  double power_watts = 0;
  SensorReading next;
  double reward = 0;
};

struct EpisodeRecord {
  SensorReading initial;  // trigger-probe observation
  std::vector<StepRecord> steps;
  double ret = 0;
};

// Rolls one 80-step episode: probe once at minimum power for the initial
// observation, then power = policy_fn(step_index, latest observation).
EpisodeRecord run_episode(const std::function<double(int, const SensorReading&)>& policy_fn,
                          const SurfaceProfile& profile, const SimParams& params,
                          std::uint64_t seed, std::uint32_t episode);

struct BaselineResult {
  double best_power = 0;
  double best_mean_return = 0;
  std::vector<std::pair<double, double>> grid;  // (power, mean return)
};

// Constant-power grid search; ties break toward lower power. Episode ids for
// the noise streams start at kBaselineEpisodeBase so baseline roll-outs never
// share draws with training episodes.
inline constexpr std::uint32_t kBaselineEpisodeBase = 1'000'000;

BaselineResult grid_search_baseline(const SurfaceProfile& profile, const SimParams& params,
                                    const BaselineParams& bp, std::uint64_t seed);

}  // namespace weldloop::sim
