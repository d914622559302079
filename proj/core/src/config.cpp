#include "weldloop/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace weldloop {
namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  if (out.empty()) throw std::invalid_argument("empty int list");
  return out;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("bad bool: " + s);
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

struct Binding {
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

// The snapshot covers exactly these keys; profile.* is handled separately
// because the segment list has dynamic length.
std::map<std::string, Binding> bindings(RunConfig& c) {
  std::map<std::string, Binding> m;
  auto d = [&m](const std::string& k, double& ref) {
    m[k] = {[&ref] { return fmt_double(ref); },
            [&ref](const std::string& s) { ref = std::stod(s); }};
  };
  auto i = [&m](const std::string& k, int& ref) {
    m[k] = {[&ref] { return std::to_string(ref); },
            [&ref](const std::string& s) { ref = std::stoi(s); }};
  };
  auto str = [&m](const std::string& k, std::string& ref) {
    m[k] = {[&ref] { return ref; }, [&ref](const std::string& s) { ref = s; }};
  };

  str("run.surface", c.surface);
  m["run.seed"] = {[&c] { return std::to_string(c.seed); },
                   [&c](const std::string& s) { c.seed = std::stoull(s); }};

  d("sim.lambda", c.sim.lambda);
  d("sim.c", c.sim.c);
  d("sim.a0", c.sim.a0);
  d("sim.kappa", c.sim.kappa);
  d("sim.sa_ref", c.sim.sa_ref);
  d("sim.rho0", c.sim.rho0);
  d("sim.w", c.sim.w);
  d("sim.m_kh", c.sim.m_kh);
  d("sim.m_max", c.sim.m_max);
  d("sim.or_peak", c.sim.or_peak);
  d("sim.or_kh_factor", c.sim.or_kh_factor);
  d("sim.b0", c.sim.b0);
  d("sim.e0", c.sim.e0);
  d("sim.e1", c.sim.e1);
  d("sim.sigma_oe", c.sim.sigma_oe);
  d("sim.noise_brushed", c.sim.noise_brushed);
  d("sim.noise_sandblasted", c.sim.noise_sandblasted);
  d("sim.noise_scale", c.sim.noise_scale);

  d("sac.lr", c.sac.lr);
  d("sac.gamma", c.sac.gamma);
  d("sac.tau", c.sac.tau);
  i("sac.batch", c.sac.batch);
  i("sac.grad_steps", c.sac.grad_steps);
  d("sac.target_entropy", c.sac.target_entropy);
  i("sac.buffer_capacity", c.sac.buffer_capacity);
  d("sac.adam_beta1", c.sac.adam_beta1);
  d("sac.adam_beta2", c.sac.adam_beta2);
  d("sac.adam_eps", c.sac.adam_eps);
  m["sac.policy_hidden"] = {
      [&c] { return fmt_ints(c.sac.policy_hidden); },
      [&c](const std::string& s) { c.sac.policy_hidden = parse_ints(s); }};
  m["sac.critic_hidden"] = {
      [&c] { return fmt_ints(c.sac.critic_hidden); },
      [&c](const std::string& s) { c.sac.critic_hidden = parse_ints(s); }};
  d("sac.init_final_scale", c.sac.init_final_scale);

  d("device.trigger_threshold", c.device.trigger_threshold);
  d("device.probe_power", c.device.probe_power);
  i("device.probe_limit", c.device.probe_limit);

  i("sched.episodes", c.sched.episodes);
  i("sched.random_episodes", c.sched.random_episodes);
  i("sched.test_every", c.sched.test_every);
  i("sched.test_start", c.sched.test_start);

  d("baseline.power_min", c.baseline.power_min);
  d("baseline.power_max", c.baseline.power_max);
  d("baseline.power_step", c.baseline.power_step);
  i("baseline.episodes_per_power", c.baseline.episodes_per_power);

  return m;
}

// keys outside the snapshot, still settable from a config file
std::map<std::string, Binding> extra_bindings(RunConfig& c) {
  std::map<std::string, Binding> m;
  m["run.transport"] = {[&c] { return c.transport; },
                        [&c](const std::string& s) { c.transport = s; }};
  m["run.device_exe"] = {[&c] { return c.device_exe; },
                         [&c](const std::string& s) { c.device_exe = s; }};
  m["run.plots"] = {[&c] { return c.plots ? "true" : "false"; },
                    [&c](const std::string& s) { c.plots = parse_bool(s); }};
  m["device.realtime"] = {
      [&c] { return c.device.realtime ? "true" : "false"; },
      [&c](const std::string& s) { c.device.realtime = parse_bool(s); }};
  m["device.step_ms"] = {[&c] { return fmt_double(c.device.step_ms); },
                         [&c](const std::string& s) { c.device.step_ms = std::stod(s); }};
  m["link.timeout_ms"] = {[&c] { return std::to_string(c.link.timeout_ms); },
                          [&c](const std::string& s) { c.link.timeout_ms = std::stoi(s); }};
  m["link.port"] = {[&c] { return std::to_string(c.link.port); },
                    [&c](const std::string& s) { c.link.port = std::stoi(s); }};
  return m;
}

void set_profile_key(RunConfig& c, const std::string& key, const std::string& val) {
  // profile.segments=N, profile.<i>.length_mm / .sa / .noise_sd / .kind
  if (key == "profile.segments") {
    c.custom_segments.assign(static_cast<size_t>(std::stoi(val)), SegmentSpec{});
    return;
  }
  const auto dot1 = key.find('.', 8);  // after "profile."
  if (key.rfind("profile.", 0) != 0 || dot1 == std::string::npos)
    throw std::invalid_argument("unknown config key: " + key);
  const size_t idx = std::stoul(key.substr(8, dot1 - 8));
  const std::string field = key.substr(dot1 + 1);
  if (idx >= c.custom_segments.size())
    throw std::invalid_argument("profile segment index out of range: " + key);
  SegmentSpec& seg = c.custom_segments[idx];
  if (field == "length_mm") seg.length_mm = std::stod(val);
  else if (field == "sa") seg.sa = std::stod(val);
  else if (field == "noise_sd") seg.noise_sd = std::stod(val);
  else if (field == "kind") seg.kind = val;
  else throw std::invalid_argument("unknown config key: " + key);
}

}  // namespace

void apply_config_text(RunConfig& cfg, const std::string& text) {
  auto snap = bindings(cfg);
  auto extra = extra_bindings(cfg);
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key=value, got: " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (auto it = snap.find(key); it != snap.end()) it->second.set(val);
      else if (auto jt = extra.find(key); jt != extra.end()) jt->second.set(val);
      else if (key.rfind("profile.", 0) == 0) set_profile_key(cfg, key, val);
      else throw std::invalid_argument("unknown config key: " + key);
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + " (" +
                                  key + "): " + e.what());
    }
  }
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str());
}

std::string snapshot_config(const RunConfig& cfg) {
  auto& c = const_cast<RunConfig&>(cfg);  // bindings only read via .get()
  std::string out;
  for (auto& [key, bind] : bindings(c)) out += key + " = " + bind.get() + "\n";
  if (!cfg.custom_segments.empty()) {
    out += "profile.segments = " + std::to_string(cfg.custom_segments.size()) + "\n";
    for (size_t i = 0; i < cfg.custom_segments.size(); ++i) {
      const auto& s = cfg.custom_segments[i];
      const std::string p = "profile." + std::to_string(i) + ".";
      out += p + "kind = " + s.kind + "\n";
      out += p + "length_mm = " + fmt_double(s.length_mm) + "\n";
      out += p + "noise_sd = " + fmt_double(s.noise_sd) + "\n";
      out += p + "sa = " + fmt_double(s.sa) + "\n";
    }
  }
  return out;
}

}  // namespace weldloop
