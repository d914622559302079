#include "weldloop/session.hpp"

#include "weldloop/rng.hpp"

namespace weldloop::session {

ServerSession::ServerSession(link::FramedConn& conn, const LinkParams& lp)
    : conn_(conn), timeout_ms_(lp.timeout_ms) {}

link::ExperiencePayload ServerSession::run_episode(const std::vector<std::uint8_t>& weights,
                                                   std::uint32_t episode_id, device::Mode mode,
                                                   const std::vector<float>& epsilons) {
  conn_.send(link::MsgType::kWeights, weights);
  link::EpsilonsPayload ep;
  ep.episode_id = episode_id;
  ep.eps = epsilons;
  conn_.send(link::MsgType::kEpsilons, link::encode_epsilons(ep));
  link::ControlPayload start;
  start.cmd = link::ControlPayload::kStartEpisode;
  start.episode_id = episode_id;
  start.arg = static_cast<std::uint8_t>(mode);
  conn_.send(link::MsgType::kControl, link::encode_control(start));

  for (;;) {
    std::optional<link::Frame> f;
    try {
      f = conn_.recv(timeout_ms_);
    } catch (const link::LinkError& e) {
      throw SessionError(e.kind == link::LinkError::kTimeout ? SessionError::kTimeout
                                                             : SessionError::kProtocol,
                         e.what());
    }
    if (!f) throw SessionError(SessionError::kClosed, "device closed the connection");
    switch (f->type) {
      case link::MsgType::kExperience: {
        const link::ExperiencePayload payload = link::decode_experience(f->payload);
        if (payload.episode_id == episode_id) {
          completed_.insert(episode_id);
          ++counters_.episodes;
          return payload;
        }
        if (completed_.count(payload.episode_id)) {
          ++counters_.duplicates;  // retransmit of a finished episode
          continue;
        }
        throw SessionError(SessionError::kProtocol,
                           "experience for unknown episode " + std::to_string(payload.episode_id));
      }
      case link::MsgType::kControl: {
        const link::ControlPayload cp = link::decode_control(f->payload);
        if (cp.cmd == link::ControlPayload::kError)
          throw SessionError(SessionError::kDeviceError,
                             "device error " + std::to_string(cp.arg) + " in episode " +
                                 std::to_string(cp.episode_id),
                             cp.arg);
        throw SessionError(SessionError::kProtocol, "unexpected control command");
      }
      default:
        throw SessionError(SessionError::kProtocol, "unexpected frame type from device");
    }
  }
}

void ServerSession::shutdown() {
  link::ControlPayload cp;
  cp.cmd = link::ControlPayload::kShutdown;
  conn_.send(link::MsgType::kControl, link::encode_control(cp));
}

std::vector<float> draw_epsilons(std::uint64_t seed, std::uint32_t episode_id, int count) {
  std::vector<float> eps;
  eps.reserve(static_cast<std::size_t>(count));
  for (int t = 0; t < count; ++t)
    eps.push_back(static_cast<float>(
        rng::normal(rng::key(seed, rng::kEpsilons, episode_id, static_cast<std::uint64_t>(t)))));
  return eps;
}

}  // namespace weldloop::session
