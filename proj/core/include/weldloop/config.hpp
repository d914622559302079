#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace weldloop {

// Surrogate weld process parameters. Defaults are the tuned values the test
// suite pins; everything is overridable from a key=value config file.
struct SimParams {
  double lambda = 0.7;          // melt retention per 10 ms step
  double c = 0.0035;            // melt gain per absorbed watt
  double a0 = 0.8;              // base absorptivity
  double kappa = 0.25;          // roughness contribution to absorptivity
  double sa_ref = 1.47;         // reference Sa (um)
  double rho0 = 0.3;            // base scattering loss
  double w = 0.5;               // melt-induced scattering reduction
  double m_kh = 1.0;            // keyhole threshold on melt
  double m_max = 2.0;           // melt clamp
  double or_peak = 8.0;         // conduction-mode OR peak (V)
  double or_kh_factor = 0.15;   // OR collapse factor in keyhole
  double b0 = 1.0;              // baseline reflection at full power (V)
  double e0 = 5.0;              // OE melt gain (V)
  double e1 = 2.0;              // OE keyhole bonus (V)
  double sigma_oe = 0.1;        // OE noise sd (V)
  double noise_brushed = 0.4;   // OR noise sd on brushed segments (V)
  double noise_sandblasted = 0.15;  // OR noise sd on sandblasted segments (V)
  double noise_scale = 1.0;     // global noise multiplier (0 = noise off)
};

struct SacParams {
  double lr = 3e-4;
  double gamma = 0.99;
  double tau = 0.005;
  int batch = 100;
  int grad_steps = 80;
  double target_entropy = -2.0;
  int buffer_capacity = 100000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::vector<int> policy_hidden{32, 64};
  std::vector<int> critic_hidden{32, 64};
  double init_final_scale = 3e-3;  // init range of the output layers
};

struct DeviceParams {
  double trigger_threshold = 0.1;  // V of OR that arms the episode
  double probe_power = 25.0;       // W applied while waiting for trigger
  int probe_limit = 100;           // probes before aborting the episode
  bool realtime = false;           // pace steps at step_ms wall time
  double step_ms = 10.0;
};

struct SchedParams {
  int episodes = 300;        // train episodes
  int random_episodes = 25;  // leading uniform-random episodes
  int test_every = 10;       // test episode after every k-th train episode
  int test_start = 30;       // first train episode followed by a test
};

struct BaselineParams {
  double power_min = 25.0;
  double power_max = 100.0;
  double power_step = 5.0;
  int episodes_per_power = 20;
};

struct LinkParams {
  int timeout_ms = 30000;
  int port = 0;  // tcp transport; 0 = ephemeral
};

// One inline surface segment (used when a custom profile replaces a preset).
struct SegmentSpec {
  double length_mm = 0.0;
  double sa = 0.0;
  double noise_sd = 0.0;
  std::string kind = "brushed";
};

struct RunConfig {
  std::string surface = "brushed";        // preset name
  std::vector<SegmentSpec> custom_segments;  // non-empty overrides `surface`
  std::uint64_t seed = 1;
  std::string out_dir;
  std::string transport = "inproc";  // inproc | tcp
  std::string device_exe;            // binary spawned for tcp mode
  bool plots = false;                // render SVGs after the run
  SimParams sim;
  SacParams sac;
  DeviceParams device;
  SchedParams sched;
  BaselineParams baseline;
  LinkParams link;
};

// Applies `key=value` lines ('#' comments, blank lines ok). Throws
// std::invalid_argument on unknown keys or unparsable values.
void apply_config_text(RunConfig& cfg, const std::string& text);
void apply_config_file(RunConfig& cfg, const std::string& path);

// Full dump of the experiment-defining keys (sorted). Round-trips through
// apply_config_text; deployment details (out dir, transport, realtime, link)
// are deliberately not part of the snapshot.
std::string snapshot_config(const RunConfig& cfg);

}  // namespace weldloop
