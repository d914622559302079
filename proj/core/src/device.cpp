#include "weldloop/device.hpp"

#include <chrono>
#include <thread>

#include "weldloop/rng.hpp"

namespace weldloop::device {

DeviceRuntime::DeviceRuntime(const DeviceParams& dp, std::uint64_t seed)
    : dp_(dp), seed_(seed) {}

std::uint32_t DeviceRuntime::install_weights(const std::vector<std::uint8_t>& blob) {
  qnet::QuantizedPolicy p = qnet::decode_policy(blob);
  if (p.dims != qnet::kArtifactDims)
    throw std::invalid_argument("weights blob has the wrong network shape");
  if (policy_ && p.version < policy_->version)
    throw DeviceError(link::ControlPayload::kErrBadState, "policy version decreased");
  policy_ = std::move(p);
  return policy_->version;
}

void DeviceRuntime::install_epsilons(std::uint32_t episode_id, std::vector<float> eps) {
  pending_eps_ = std::make_pair(episode_id, std::move(eps));
}

void DeviceRuntime::pace() const {
  if (dp_.realtime)
    std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(dp_.step_ms));
}

sim::SensorReading DeviceRuntime::trigger_wait(sim::WeldEnv& env) {
  for (int i = 0; i < dp_.probe_limit; ++i) {
    const sim::SensorReading r = env.sense_probe(dp_.probe_power, i);
    ++counters_.probes;
    pace();
    if (r.or_volts >= dp_.trigger_threshold) return r;
  }
  throw DeviceError(link::ControlPayload::kErrTrigger, "no trigger within probe limit");
}

link::ExperiencePayload DeviceRuntime::run_episode(sim::WeldEnv& env, std::uint32_t episode_id,
                                                   Mode mode) {
  if (!policy_)
    throw DeviceError(link::ControlPayload::kErrBadState, "no weights installed");
  if (!pending_eps_ || pending_eps_->first != episode_id)
    throw DeviceError(link::ControlPayload::kErrBadState, "no fresh epsilons for episode");
  const std::vector<float> eps = std::move(pending_eps_->second);
  pending_eps_.reset();  // single use; retransmits need fresh epsilons
  if (eps.size() != static_cast<std::size_t>(sim::WeldEnv::kSteps))
    throw DeviceError(link::ControlPayload::kErrProtocol, "epsilon count mismatch");

  link::ExperiencePayload payload;
  payload.episode_id = episode_id;
  payload.flags = (mode == Mode::kTest) ? 1 : 0;
  payload.entries.reserve(sim::WeldEnv::kSteps + 1);

  const sim::SensorReading first = trigger_wait(env);
  float s_or = static_cast<float>(first.or_volts);
  float s_oe = static_cast<float>(first.oe_volts);
  for (int t = 0; t < sim::WeldEnv::kSteps; ++t) {
    const float drawn = eps[static_cast<std::size_t>(t)];
    ++counters_.epsilons_consumed;
    const float use_eps = (mode == Mode::kTrain) ? drawn : 0.0f;
    const auto codes = qnet::quantize_obs(static_cast<double>(s_or), static_cast<double>(s_oe));
    const qnet::Action act = qnet::infer(*policy_, {codes[0], codes[1]}, use_eps);
    ++counters_.infer_calls;
    float a_f, p_f;
    if (mode == Mode::kRandom) {
      const double pw =
          25.0 + 75.0 * rng::uniform01(rng::key(seed_, rng::kExplore, episode_id,
                                                static_cast<std::uint64_t>(t)));
      p_f = static_cast<float>(pw);
      a_f = static_cast<float>(qnet::squashed_from_power(static_cast<double>(p_f)));
    } else {
      a_f = static_cast<float>(act.squashed);
      p_f = static_cast<float>(act.power_watts);
    }
    payload.entries.push_back({s_or, s_oe, a_f, p_f});
    const sim::SensorReading r = env.step(static_cast<double>(p_f));
    s_or = static_cast<float>(r.or_volts);
    s_oe = static_cast<float>(r.oe_volts);
    pace();
  }
  payload.entries.push_back({s_or, s_oe, 0.0f, 0.0f});
  ++counters_.episodes;
  return payload;
}

DeviceSessionResult run_device_session(link::FramedConn& conn, const RunConfig& cfg) {
  DeviceRuntime rt(cfg.device, cfg.seed);
  const sim::SurfaceProfile profile = sim::profile_from_config(cfg);
  DeviceSessionResult result;

  const auto send_error = [&](link::ControlPayload::Err code, std::uint32_t episode) {
    link::ControlPayload cp;
    cp.cmd = link::ControlPayload::kError;
    cp.episode_id = episode;
    cp.arg = code;
    conn.send(link::MsgType::kControl, link::encode_control(cp));
  };

  for (;;) {
    std::optional<link::Frame> f;
    try {
      f = conn.recv(cfg.link.timeout_ms);
    } catch (const link::LinkError& e) {
      result.abort_reason = e.what();
      break;
    }
    if (!f) {
      result.abort_reason = "connection closed";
      break;
    }
    try {
      switch (f->type) {
        case link::MsgType::kWeights:
          try {
            rt.install_weights(f->payload);
          } catch (const DeviceError& e) {
            send_error(e.code, 0);
          }
          break;
        case link::MsgType::kEpsilons: {
          const link::EpsilonsPayload ep = link::decode_epsilons(f->payload);
          if (!rt.has_policy()) {
            send_error(link::ControlPayload::kErrBadState, ep.episode_id);
            break;
          }
          rt.install_epsilons(ep.episode_id, ep.eps);
          break;
        }
        case link::MsgType::kControl: {
          const link::ControlPayload cp = link::decode_control(f->payload);
          if (cp.cmd == link::ControlPayload::kShutdown) {
            result.clean_shutdown = true;
            result.counters = rt.counters();
            return result;
          }
          if (cp.cmd == link::ControlPayload::kError) {
            result.abort_reason = "server reported error " + std::to_string(cp.arg);
            result.counters = rt.counters();
            return result;
          }
          if (cp.arg > static_cast<std::uint8_t>(Mode::kRandom)) {
            send_error(link::ControlPayload::kErrProtocol, cp.episode_id);
            break;
          }
          try {
            sim::WeldEnv env(profile, cfg.sim, cfg.seed, cp.episode_id);
            const link::ExperiencePayload payload =
                rt.run_episode(env, cp.episode_id, static_cast<Mode>(cp.arg));
            conn.send(link::MsgType::kExperience, link::encode_experience(payload));
            ++result.episodes_run;
          } catch (const DeviceError& e) {
            send_error(e.code, cp.episode_id);
          }
          break;
        }
        case link::MsgType::kExperience:
          send_error(link::ControlPayload::kErrProtocol, 0);
          break;
      }
    } catch (const std::invalid_argument&) {
      // malformed payload on an intact frame
      send_error(link::ControlPayload::kErrProtocol, 0);
    }
  }
  result.counters = rt.counters();
  return result;
}

}  // namespace weldloop::device
