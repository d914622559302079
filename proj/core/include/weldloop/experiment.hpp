#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "weldloop/config.hpp"
#include "weldloop/device.hpp"
#include "weldloop/link.hpp"
#include "weldloop/session.hpp"
#include "weldloop/twin.hpp"
#include "weldloop/weldsim.hpp"

// End-to-end experiment: baseline grid search, then the training loop driving
// a device over the link (in-process loopback or a spawned tcp peer), with
// all artifacts written as CSV by a single writer.
namespace weldloop::experiment {

struct TrainRow {
  int episode = 0;
  double ret = 0;
  std::uint32_t policy_version = 0;
};

struct TestRow {
  int after_episode = 0;  // the train episode this evaluation followed
  double ret = 0;
};

struct RunResult {
  sim::BaselineResult baseline;
  std::vector<TrainRow> train;
  std::vector<TestRow> tests;
  std::vector<link::ExperiencePayload> test_payloads;
  double improvement_percent = 0;
  session::ServerCounters server;
  std::optional<device::DeviceCounters> device;  // in-process transport only
};

// Test episodes get ids far above the train range so their noise streams
// never collide with training episodes (baseline uses its own base).
inline constexpr std::uint32_t kTestEpisodeBase = 2'000'000;

// 100 * (mean of the last <=10 test returns - baseline) / baseline.
double compare_to_baseline(const std::vector<double>& test_returns, double baseline_mean_return);

std::vector<twin::Transition> transitions_from_payload(const link::ExperiencePayload& p);
double return_from_payload(const link::ExperiencePayload& p);

// Runs the full schedule per cfg. Writes train_returns.csv, test_returns.csv,
// baseline.csv, losses.csv, trace_ep<N>.csv (one per test episode) and
// config.txt into cfg.out_dir (no files when out_dir is empty).
RunResult run_experiment(const RunConfig& cfg);

}  // namespace weldloop::experiment
