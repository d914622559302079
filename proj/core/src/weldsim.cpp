#include "weldloop/weldsim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "weldloop/qnet.hpp"
#include "weldloop/rng.hpp"

namespace weldloop::sim {
namespace {

SurfaceKind kind_from_string(const std::string& s) {
  if (s == "brushed") return SurfaceKind::kBrushed;
  if (s == "sandblasted") return SurfaceKind::kSandblasted;
  throw std::invalid_argument("unknown segment kind: " + s);
}

void validate_segments(const std::vector<Segment>& segs) {
  if (segs.empty()) throw std::invalid_argument("surface profile: no segments");
  for (const Segment& s : segs) {
    if (!(s.length_mm > 0)) throw std::invalid_argument("surface profile: non-positive length");
    if (!(s.sa_um >= 0) || !(s.noise_sd_volts >= 0))
      throw std::invalid_argument("surface profile: negative Sa or noise");
  }
}

}  // namespace

SurfaceProfile SurfaceProfile::preset(const std::string& name, const SimParams& p) {
  SurfaceProfile prof;
  const double nb = p.noise_brushed, ns = p.noise_sandblasted;
  if (name == "brushed") {
    prof.segments = {{40.0, 1.47, nb, SurfaceKind::kBrushed}};
  } else if (name == "sandblasted") {
    prof.segments = {{40.0, 1.20, ns, SurfaceKind::kSandblasted}};
  } else if (name == "mixed") {
    prof.segments = {{10.0, 1.47, nb, SurfaceKind::kBrushed},
                     {20.0, 1.23, ns, SurfaceKind::kSandblasted},
                     {10.0, 1.47, nb, SurfaceKind::kBrushed}};
  } else {
    throw std::invalid_argument("unknown surface preset: " + name);
  }
  return prof;
}

SurfaceProfile SurfaceProfile::from_segments(const std::vector<SegmentSpec>& specs) {
  SurfaceProfile prof;
  for (const SegmentSpec& s : specs)
    prof.segments.push_back({s.length_mm, s.sa, s.noise_sd, kind_from_string(s.kind)});
  validate_segments(prof.segments);
  return prof;
}

const Segment& SurfaceProfile::at(double x_mm) const {
  double cum = 0;
  for (const Segment& s : segments) {
    cum += s.length_mm;
    if (x_mm < cum) return s;
  }
  return segments.back();
}

double SurfaceProfile::total_length_mm() const {
  double cum = 0;
  for (const Segment& s : segments) cum += s.length_mm;
  return cum;
}

SurfaceProfile profile_from_config(const RunConfig& cfg) {
  if (!cfg.custom_segments.empty()) return SurfaceProfile::from_segments(cfg.custom_segments);
  return SurfaceProfile::preset(cfg.surface, cfg.sim);
}

WeldEnv::WeldEnv(SurfaceProfile profile, const SimParams& params, std::uint64_t seed,
                 std::uint32_t episode)
    : profile_(std::move(profile)), prm_(params), seed_(seed), episode_(episode) {
  validate_segments(profile_.segments);
}

SensorReading WeldEnv::step(double power_watts) {
  if (st_.t >= kSteps) throw std::domain_error("weld episode over");
  if (!(power_watts >= qnet::kPowerMinW && power_watts <= qnet::kPowerMaxW))
    throw std::invalid_argument("power out of range");
  const double x = 0.5 * st_.t;  // 50 mm/s x 10 ms, position entering the step
  const Segment& seg = profile_.at(x);
  const double absorb = prm_.a0 * (1.0 + prm_.kappa * seg.sa_um / prm_.sa_ref);
  const double m2 = std::clamp(prm_.lambda * st_.m + prm_.c * absorb * power_watts, 0.0, prm_.m_max);
  bool kh = st_.keyhole;
  if (m2 >= prm_.m_kh) {
    kh = true;
  } else if (m2 <= 0.8 * prm_.m_kh) {
    kh = false;
  }
  const double rho = prm_.rho0 * (seg.sa_um / prm_.sa_ref) * (1.0 - prm_.w * std::min(m2, 1.0));
  const double n_or = rng::normal(rng::key(seed_, rng::kEnvStepOr, episode_, st_.t)) *
                      seg.noise_sd_volts * prm_.noise_scale;
  const double n_oe = rng::normal(rng::key(seed_, rng::kEnvStepOe, episode_, st_.t)) *
                      prm_.sigma_oe * prm_.noise_scale;
  SensorReading r;
  r.or_volts = std::clamp(prm_.b0 * (power_watts / 100.0) * (1.0 - rho) +
                              prm_.or_peak * (kh ? prm_.or_kh_factor : m2 / prm_.m_kh) * (1.0 - rho) +
                              n_or,
                          0.0, 10.0);
  r.oe_volts =
      std::clamp(prm_.e0 * std::min(m2, 1.0) + prm_.e1 * (kh ? 1.0 : 0.0) + n_oe, 0.0, 10.0);
  st_.m = m2;
  st_.keyhole = kh;
  st_.t += 1;
  return r;
}

SensorReading WeldEnv::sense_probe(double power_watts, int probe_index) const {
  if (!(power_watts >= qnet::kPowerMinW && power_watts <= qnet::kPowerMaxW))
    throw std::invalid_argument("power out of range");
  const double x = 0.5 * st_.t;
  const Segment& seg = profile_.at(x);
  const double rho =
      prm_.rho0 * (seg.sa_um / prm_.sa_ref) * (1.0 - prm_.w * std::min(st_.m, 1.0));
  const double n_or =
      rng::normal(rng::key(seed_, rng::kEnvProbeOr, episode_, static_cast<std::uint64_t>(probe_index))) *
      seg.noise_sd_volts * prm_.noise_scale;
  const double n_oe =
      rng::normal(rng::key(seed_, rng::kEnvProbeOe, episode_, static_cast<std::uint64_t>(probe_index))) *
      prm_.sigma_oe * prm_.noise_scale;
  SensorReading r;
  r.or_volts =
      std::clamp(prm_.b0 * (power_watts / 100.0) * (1.0 - rho) +
                     prm_.or_peak * (st_.keyhole ? prm_.or_kh_factor : st_.m / prm_.m_kh) *
                         (1.0 - rho) +
                     n_or,
                 0.0, 10.0);
  r.oe_volts = std::clamp(
      prm_.e0 * std::min(st_.m, 1.0) + prm_.e1 * (st_.keyhole ? 1.0 : 0.0) + n_oe, 0.0, 10.0);
  return r;
}

std::vector<bool> replay_keyhole(const SurfaceProfile& profile, const SimParams& params,
                                 const std::vector<double>& powers) {
  std::vector<bool> flags;
  flags.reserve(powers.size());
  double m = 0;
  bool kh = false;
  for (std::size_t t = 0; t < powers.size(); ++t) {
    const Segment& seg = profile.at(0.5 * static_cast<double>(t));
    const double absorb = params.a0 * (1.0 + params.kappa * seg.sa_um / params.sa_ref);
    m = std::clamp(params.lambda * m + params.c * absorb * powers[t], 0.0, params.m_max);
    if (m >= params.m_kh) {
      kh = true;
    } else if (m <= 0.8 * params.m_kh) {
      kh = false;
    }
    flags.push_back(kh);
  }
  return flags;
}

EpisodeRecord run_episode(const std::function<double(int, const SensorReading&)>& policy_fn,
                          const SurfaceProfile& profile, const SimParams& params,
                          std::uint64_t seed, std::uint32_t episode) {
  WeldEnv env(profile, params, seed, episode);
  EpisodeRecord rec;
  rec.initial = env.sense_probe(qnet::kPowerMinW, 0);
  SensorReading obs = rec.initial;
  for (int t = 0; t < WeldEnv::kSteps; ++t) {
    StepRecord sr;
    sr.obs = obs;
    sr.power_watts = policy_fn(t, obs);
    sr.next = env.step(sr.power_watts);
    sr.reward = reward(sr.next);
    rec.ret += sr.reward;
    obs = sr.next;
    rec.steps.push_back(sr);
  }
  return rec;
}

BaselineResult grid_search_baseline(const SurfaceProfile& profile, const SimParams& params,
                                    const BaselineParams& bp, std::uint64_t seed) {
  if (!(bp.power_step > 0) || bp.power_max < bp.power_min)
    throw std::invalid_argument("baseline: empty power grid");
  if (bp.episodes_per_power <= 0) throw std::invalid_argument("baseline: no episodes per power");
  BaselineResult res;
  bool first = true;
  int pi = 0;
  for (double p = bp.power_min; p <= bp.power_max + 1e-9; p += bp.power_step, ++pi) {
    const double power = std::min(p, bp.power_max);
    double sum = 0;
    for (int rep = 0; rep < bp.episodes_per_power; ++rep) {
      const std::uint32_t ep =
          kBaselineEpisodeBase + static_cast<std::uint32_t>(pi * bp.episodes_per_power + rep);
      sum += run_episode([power](int, const SensorReading&) { return power; }, profile, params,
                         seed, ep)
                 .ret;
    }
    const double mean = sum / bp.episodes_per_power;
    res.grid.emplace_back(power, mean);
    if (first || mean > res.best_mean_return) {
      first = false;
      res.best_power = power;
      res.best_mean_return = mean;
    }
  }
  return res;
}

}  // namespace weldloop::sim
