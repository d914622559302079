#include <unistd.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "weldloop/config.hpp"
#include "weldloop/device.hpp"
#include "weldloop/experiment.hpp"
#include "weldloop/link.hpp"
#include "weldloop/plot.hpp"
#include "weldloop/weldsim.hpp"

namespace {

std::string self_exe() {
  char buf[4096];
  const ssize_t n = ::readlink("/proc/self/exe", buf, sizeof buf - 1);
  if (n <= 0) return {};
  buf[n] = '\0';
  return buf;
}

weldloop::RunConfig load_config(const std::vector<std::string>& files,
                                const std::vector<std::string>& sets) {
  weldloop::RunConfig cfg;
  for (const std::string& f : files) weldloop::apply_config_file(cfg, f);
  for (const std::string& s : sets) weldloop::apply_config_text(cfg, s);
  return cfg;
}

std::pair<std::string, int> split_addr(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos)
    throw std::invalid_argument("expected host:port, got: " + addr);
  return {addr.substr(0, colon), std::stoi(addr.substr(colon + 1))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"closed-loop laser power control testbed"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "train a policy and log the run artifacts");
  std::vector<std::string> run_cfgs, run_sets;
  std::string run_out, run_surface, run_transport;
  std::uint64_t run_seed = 0;
  int run_episodes = 0;
  bool run_plots = false;
  run->add_option("-c,--config", run_cfgs, "config file(s) with key = value lines");
  run->add_option("-s,--set", run_sets, "inline override, e.g. sim.noise_scale=0");
  run->add_option("-o,--out", run_out, "artifact directory");
  auto* run_surface_opt =
      run->add_option("--surface", run_surface, "surface preset: brushed|sandblasted|mixed");
  auto* run_seed_opt = run->add_option("--seed", run_seed, "run seed");
  auto* run_ep_opt = run->add_option("--episodes", run_episodes, "train episodes");
  run->add_option("--transport", run_transport, "inproc|tcp")
      ->check(CLI::IsMember({"inproc", "tcp"}));
  run->add_flag("--plots", run_plots, "write SVG charts next to the CSVs");

  auto* base = app.add_subcommand("baseline", "grid-search the constant-power baseline");
  std::vector<std::string> base_cfgs, base_sets;
  std::string base_out, base_surface;
  std::uint64_t base_seed = 0;
  base->add_option("-c,--config", base_cfgs, "config file(s)");
  base->add_option("-s,--set", base_sets, "inline override");
  base->add_option("-o,--out", base_out, "write baseline.csv here");
  auto* base_surface_opt = base->add_option("--surface", base_surface, "surface preset");
  auto* base_seed_opt = base->add_option("--seed", base_seed, "run seed");

  auto* dev = app.add_subcommand("device", "run the device runtime against a remote trainer");
  std::vector<std::string> dev_cfgs, dev_sets;
  std::string dev_addr;
  bool dev_realtime = false;
  dev->add_option("--connect", dev_addr, "trainer address host:port")->required();
  dev->add_option("-c,--config", dev_cfgs, "config file(s)");
  dev->add_option("-s,--set", dev_sets, "inline override");
  dev->add_flag("--realtime", dev_realtime, "pace steps at device.step_ms wall time");

  auto* plot = app.add_subcommand("plot", "render SVG charts for an existing run directory");
  std::string plot_dir;
  plot->add_option("dir", plot_dir, "run directory with the CSVs")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      weldloop::RunConfig cfg = load_config(run_cfgs, run_sets);
      if (run_surface_opt->count()) cfg.surface = run_surface;
      if (run_seed_opt->count()) cfg.seed = run_seed;
      if (run_ep_opt->count()) cfg.sched.episodes = run_episodes;
      if (!run_out.empty()) cfg.out_dir = run_out;
      if (!run_transport.empty()) cfg.transport = run_transport;
      if (run_plots) cfg.plots = true;
      if (cfg.transport == "tcp" && cfg.device_exe.empty()) cfg.device_exe = self_exe();

      const auto res = weldloop::experiment::run_experiment(cfg);
      std::printf("baseline: best %g W, mean return %.6g\n", res.baseline.best_power,
                  res.baseline.best_mean_return);
      std::printf("episodes: %zu train, %zu test\n", res.train.size(), res.tests.size());
      if (!res.tests.empty())
        std::printf("improvement over baseline: %+.2f%%\n", res.improvement_percent);
      if (!cfg.out_dir.empty()) std::printf("artifacts: %s\n", cfg.out_dir.c_str());
      return 0;
    }

    if (*base) {
      weldloop::RunConfig cfg = load_config(base_cfgs, base_sets);
      if (base_surface_opt->count()) cfg.surface = base_surface;
      if (base_seed_opt->count()) cfg.seed = base_seed;
      const auto profile = weldloop::sim::profile_from_config(cfg);
      const auto res =
          weldloop::sim::grid_search_baseline(profile, cfg.sim, cfg.baseline, cfg.seed);
      for (const auto& [power, mean] : res.grid) std::printf("%6.1f W  %.6g\n", power, mean);
      std::printf("best: %g W (mean return %.6g)\n", res.best_power, res.best_mean_return);
      if (!base_out.empty()) {
        std::filesystem::create_directories(base_out);
        std::FILE* f = std::fopen((base_out + "/baseline.csv").c_str(), "wb");
        if (!f) throw std::runtime_error("cannot write " + base_out + "/baseline.csv");
        std::fprintf(f, "power,mean_return\n");
        for (const auto& [power, mean] : res.grid) std::fprintf(f, "%.9g,%.9g\n", power, mean);
        std::fclose(f);
      }
      return 0;
    }

    if (*dev) {
      weldloop::RunConfig cfg = load_config(dev_cfgs, dev_sets);
      if (dev_realtime) cfg.device.realtime = true;
      const auto [host, port] = split_addr(dev_addr);
      auto stream = weldloop::link::tcp_connect(host, port, cfg.link.timeout_ms);
      weldloop::link::FramedConn conn(stream);
      const auto res = weldloop::device::run_device_session(conn, cfg);
      if (!res.clean_shutdown) {
        std::fprintf(stderr, "device aborted: %s\n", res.abort_reason.c_str());
        return 1;
      }
      std::fprintf(stderr, "device: clean shutdown after %llu episodes\n",
                   static_cast<unsigned long long>(res.episodes_run));
      return 0;
    }

    if (*plot) {
      weldloop::plot::write_plots(plot_dir);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
