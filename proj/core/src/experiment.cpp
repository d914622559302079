#include "weldloop/experiment.hpp"

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <stdexcept>
#include <thread>
#include <utility>

#include "weldloop/plot.hpp"

namespace weldloop::experiment {
namespace {

std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// One append destined for out_dir/<file>; the writer thread is the only
// thing that touches the run CSVs while the session is live.
struct Chunk {
  std::string file;
  std::string text;
};

void writer_loop(link::BoundedQueue<Chunk>* q, const std::string& dir) {
  std::map<std::string, std::ofstream> files;
  while (auto c = q->pop()) {
    std::ofstream& f = files[c->file];
    if (!f.is_open()) f.open(dir + "/" + c->file, std::ios::binary);
    f << c->text;
  }
}

using LogFn = std::function<void(std::string, std::string)>;

void log_trace(const LogFn& log, int train_episode, const link::ExperiencePayload& p) {
  std::string rows = "step,or_volts,oe_volts,power_watts\n";
  for (std::size_t k = 1; k < p.entries.size(); ++k) {
    rows += std::to_string(k) + "," + fmt9(p.entries[k].or_volts) + "," +
            fmt9(p.entries[k].oe_volts) + "," + fmt9(p.entries[k - 1].power_watts) + "\n";
  }
  log("trace_ep" + std::to_string(train_episode) + ".csv", std::move(rows));
}

// The training loop proper: schedule episodes over the link, grow the buffer,
// run sac updates once it can fill a batch, interleave test episodes.
void serve(link::FramedConn& conn, const RunConfig& cfg, const LogFn& log, RunResult& res) {
  session::ServerSession sess(conn, cfg.link);
  twin::SacLearner learner(cfg.sac, cfg.seed);
  const SchedParams& sc = cfg.sched;

  log("train_returns.csv", "episode,return,policy_version\n");
  log("test_returns.csv", "episode,return\n");
  log("losses.csv",
      "episode,step,critic1_loss,critic2_loss,actor_loss,alpha,entropy_estimate\n");

  int tests_run = 0;
  for (int e = 1; e <= sc.episodes; ++e) {
    const device::Mode mode =
        e <= sc.random_episodes ? device::Mode::kRandom : device::Mode::kTrain;
    const std::uint32_t collected_version = learner.version;
    link::ExperiencePayload payload =
        sess.run_episode(learner.export_weights(), static_cast<std::uint32_t>(e), mode,
                         session::draw_epsilons(cfg.seed, static_cast<std::uint32_t>(e),
                                                sim::WeldEnv::kSteps));
    for (const twin::Transition& t : transitions_from_payload(payload)) learner.buffer.push(t);
    const double ret = return_from_payload(payload);
    res.train.push_back({e, ret, collected_version});
    log("train_returns.csv",
        std::to_string(e) + "," + fmt9(ret) + "," + std::to_string(collected_version) + "\n");

    if (learner.buffer.size() >= static_cast<std::size_t>(cfg.sac.batch)) {
      std::string rows;
      int step = 0;
      for (const twin::StepLosses& l : learner.sac_update()) {
        rows += std::to_string(e) + "," + std::to_string(++step) + "," + fmt9(l.critic1) + "," +
                fmt9(l.critic2) + "," + fmt9(l.actor) + "," + fmt9(l.alpha) + "," +
                fmt9(l.entropy) + "\n";
      }
      log("losses.csv", std::move(rows));
    }

    if (e >= sc.test_start && (e - sc.test_start) % sc.test_every == 0) {
      const std::uint32_t tid = kTestEpisodeBase + static_cast<std::uint32_t>(tests_run++);
      link::ExperiencePayload tp = sess.run_episode(
          learner.export_weights(), tid, device::Mode::kTest,
          session::draw_epsilons(cfg.seed, tid, sim::WeldEnv::kSteps));
      const double tret = return_from_payload(tp);
      res.tests.push_back({e, tret});
      log("test_returns.csv", std::to_string(e) + "," + fmt9(tret) + "\n");
      log_trace(log, e, tp);
      res.test_payloads.push_back(std::move(tp));
    }
  }
  sess.shutdown();
  res.server = sess.counters();

  std::vector<double> trets;
  for (const TestRow& r : res.tests) trets.push_back(r.ret);
  res.improvement_percent = compare_to_baseline(trets, res.baseline.best_mean_return);
}

std::string resolve_device_exe(const RunConfig& cfg) {
  if (!cfg.device_exe.empty()) return cfg.device_exe;
  if (const char* env = std::getenv("WELDLOOP_BIN")) return env;
  throw std::invalid_argument("tcp transport needs run.device_exe or WELDLOOP_BIN");
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

}  // namespace

double compare_to_baseline(const std::vector<double>& test_returns, double baseline_mean_return) {
  if (test_returns.empty() || baseline_mean_return == 0) return 0.0;
  const std::size_t n = std::min<std::size_t>(10, test_returns.size());
  double sum = 0;
  for (std::size_t i = test_returns.size() - n; i < test_returns.size(); ++i)
    sum += test_returns[i];
  return 100.0 * (sum / static_cast<double>(n) - baseline_mean_return) / baseline_mean_return;
}

std::vector<twin::Transition> transitions_from_payload(const link::ExperiencePayload& p) {
  std::vector<twin::Transition> out;
  const std::size_t n = p.step_count();
  out.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    twin::Transition tr;
    tr.obs = {static_cast<double>(p.entries[t].or_volts),
              static_cast<double>(p.entries[t].oe_volts)};
    tr.action_squashed = static_cast<double>(p.entries[t].action_squashed);
    tr.next_obs = {static_cast<double>(p.entries[t + 1].or_volts),
                   static_cast<double>(p.entries[t + 1].oe_volts)};
    tr.reward = static_cast<double>(p.entries[t + 1].or_volts) / 10.0;
    tr.done = t + 1 == n;
    out.push_back(tr);
  }
  return out;
}

double return_from_payload(const link::ExperiencePayload& p) {
  double sum = 0;
  for (std::size_t t = 1; t < p.entries.size(); ++t)
    sum += static_cast<double>(p.entries[t].or_volts) / 10.0;
  return sum;
}

RunResult run_experiment(const RunConfig& cfg) {
  if (cfg.transport != "inproc" && cfg.transport != "tcp")
    throw std::invalid_argument("unknown transport: " + cfg.transport);

  const sim::SurfaceProfile profile = sim::profile_from_config(cfg);
  RunResult res;
  res.baseline = sim::grid_search_baseline(profile, cfg.sim, cfg.baseline, cfg.seed);

  const bool logging = !cfg.out_dir.empty();
  const std::string cfg_text = snapshot_config(cfg);
  if (logging) {
    std::filesystem::create_directories(cfg.out_dir);
    write_text_file(cfg.out_dir + "/config.txt", cfg_text);
  }

  link::BoundedQueue<Chunk> queue(64);
  std::thread writer;
  if (logging) writer = std::thread(writer_loop, &queue, cfg.out_dir);
  const LogFn log = [&](std::string file, std::string text) {
    if (logging) queue.push(Chunk{std::move(file), std::move(text)});
  };
  auto finish_writer = [&] {
    queue.close();
    if (writer.joinable()) writer.join();
  };

  {
    std::string rows = "power,mean_return\n";
    for (const auto& [power, mean] : res.baseline.grid)
      rows += fmt9(power) + "," + fmt9(mean) + "\n";
    log("baseline.csv", std::move(rows));
  }

  try {
    if (cfg.transport == "inproc") {
      link::LoopbackPair pair = link::make_loopback();
      link::FramedConn sconn(pair.a);
      link::FramedConn dconn(pair.b);
      device::DeviceSessionResult dres;
      std::exception_ptr dev_err;
      std::thread dev([&] {
        try {
          dres = device::run_device_session(dconn, cfg);
        } catch (...) {
          dev_err = std::current_exception();
        }
      });
      try {
        serve(sconn, cfg, log, res);
      } catch (...) {
        sconn.close();
        dev.join();
        throw;
      }
      dev.join();
      if (dev_err) std::rethrow_exception(dev_err);
      if (!dres.clean_shutdown)
        throw std::runtime_error("device aborted: " + dres.abort_reason);
      res.device = dres.counters;
    } else {
      link::TcpListener listener(cfg.link.port);
      const std::string exe = resolve_device_exe(cfg);
      std::string cfg_path = logging ? cfg.out_dir + "/config.txt" : std::string();
      bool temp_cfg = false;
      if (cfg_path.empty()) {
        char tmpl[] = "/tmp/weldloop_cfg_XXXXXX";
        int fd = ::mkstemp(tmpl);
        if (fd < 0) throw std::runtime_error("mkstemp failed");
        ::close(fd);
        cfg_path = tmpl;
        temp_cfg = true;
        write_text_file(cfg_path, cfg_text);
      }
      const std::string addr = "127.0.0.1:" + std::to_string(listener.port());

      pid_t pid = ::fork();
      if (pid < 0) throw std::runtime_error("fork failed");
      if (pid == 0) {
        const char* argv[] = {exe.c_str(),      "device", "--connect", addr.c_str(),
                              "--config",       cfg_path.c_str(),      nullptr};
        ::execv(exe.c_str(), const_cast<char* const*>(argv));
        std::perror("execv");
        ::_exit(127);
      }

      auto cleanup_child = [&](bool kill_it) {
        if (kill_it) ::kill(pid, SIGKILL);
        int status = 0;
        ::waitpid(pid, &status, 0);
        if (temp_cfg) ::unlink(cfg_path.c_str());
        return status;
      };

      std::shared_ptr<link::ByteStream> stream = listener.accept(cfg.link.timeout_ms);
      if (!stream) {
        cleanup_child(true);
        throw std::runtime_error("device process never connected");
      }
      link::FramedConn sconn(stream);
      try {
        serve(sconn, cfg, log, res);
      } catch (...) {
        sconn.close();
        cleanup_child(true);
        throw;
      }
      int status = cleanup_child(false);
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
        throw std::runtime_error("device process exited abnormally");
    }
  } catch (...) {
    finish_writer();
    throw;
  }

  finish_writer();
  if (cfg.plots && logging) plot::write_plots(cfg.out_dir);
  return res;
}

}  // namespace weldloop::experiment
