#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "weldloop/rng.hpp"
#include "weldloop/twin.hpp"

namespace weldloop::twin {
namespace {

std::vector<int> net_dims(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> d;
  d.push_back(in);
  d.insert(d.end(), hidden.begin(), hidden.end());
  d.push_back(out);
  return d;
}

}  // namespace

ReplayBuffer::ReplayBuffer(std::size_t capacity) : cap_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay buffer: zero capacity");
  data_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(const Transition& t) {
  if (data_.size() < cap_) {
    data_.push_back(t);
  } else {
    data_[count_ % cap_] = t;
  }
  ++count_;
}

std::size_t ReplayBuffer::size() const { return data_.size(); }

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= data_.size()) throw std::out_of_range("replay buffer index");
  const std::size_t oldest = count_ - data_.size();
  return data_[(oldest + i) % cap_];
}

std::vector<Transition> ReplayBuffer::sample(std::size_t k, std::mt19937_64& rng) const {
  const std::size_t n = data_.size();
  if (k == 0 || k > n) throw std::invalid_argument("replay buffer: bad batch size");
  // Floyd's subset sampling: uniform without replacement.
  std::vector<std::size_t> idx;
  idx.reserve(k);
  for (std::size_t j = n - k; j < n; ++j) {
    const std::size_t t = static_cast<std::size_t>(rng() % (j + 1));
    if (std::find(idx.begin(), idx.end(), t) != idx.end()) {
      idx.push_back(j);
    } else {
      idx.push_back(t);
    }
  }
  std::vector<Transition> out;
  out.reserve(k);
  for (std::size_t i : idx) out.push_back(at(i));
  return out;
}

Adam::Adam(std::size_t n, double lr_, double b1, double b2, double eps_)
    : lr(lr_), beta1(b1), beta2(b2), eps(eps_), m(n, 0.0), v(n, 0.0) {}

void Adam::step(std::vector<double>& params, const std::vector<double>& grads) {
  if (params.size() != m.size() || grads.size() != m.size())
    throw std::invalid_argument("adam: size mismatch");
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i] * grads[i];
    params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
  }
}

void Adam::step1(double& param, double grad) {
  std::vector<double> p{param}, g{grad};
  step(p, g);
  param = p[0];
}

SacLearner::SacLearner(const SacParams& params, std::uint64_t seed)
    : p(params),
      policy(make_mlp(net_dims(2, params.policy_hidden, 2), seed, 0, params.init_final_scale)),
      q1(make_mlp(net_dims(3, params.critic_hidden, 1), seed, 1, params.init_final_scale)),
      q2(make_mlp(net_dims(3, params.critic_hidden, 1), seed, 2, params.init_final_scale)),
      q1t(q1),
      q2t(q2),
      opt_policy(policy.params.size(), params.lr, params.adam_beta1, params.adam_beta2,
                 params.adam_eps),
      opt_q1(q1.params.size(), params.lr, params.adam_beta1, params.adam_beta2, params.adam_eps),
      opt_q2(q2.params.size(), params.lr, params.adam_beta1, params.adam_beta2, params.adam_eps),
      opt_alpha(1, params.lr, params.adam_beta1, params.adam_beta2, params.adam_eps),
      buffer(static_cast<std::size_t>(params.buffer_capacity)),
      rng(rng::key(seed, rng::kTrain, 0, 0)) {}

double SacLearner::alpha() const { return std::exp(log_alpha); }

double SacLearner::normal() {
  // Box-Muller, one draw per call (the partner is discarded for simplicity).
  const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1p-53;
  const double u2 = static_cast<double>(rng() >> 11) * 0x1p-53;
  constexpr double kTwoPi = 6.283185307179586;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

std::vector<double> SacLearner::critic_target(const std::vector<Transition>& batch, double gamma,
                                              double a) {
  if (batch.empty()) throw std::invalid_argument("critic_target: empty batch");
  QuantizedView view;
  if (fake_quant) view = quantize_policy(policy, version);
  std::vector<double> ys;
  ys.reserve(batch.size());
  for (const Transition& tr : batch) {
    Tape tape;
    if (fake_quant) {
      const auto codes = qnet::quantize_obs(tr.next_obs[0], tr.next_obs[1]);
      tape = forward_fq(view, {codes[0], codes[1]});
    } else {
      tape = forward_float(policy, {obs_float_from_volts(tr.next_obs[0]),
                                    obs_float_from_volts(tr.next_obs[1])});
    }
    const HeadSample hs = head_sample(tape.out[0], tape.out[1], normal());
    const std::vector<double> qin{tr.next_obs[0], tr.next_obs[1], hs.a};
    const double qv1 = forward_float(q1t, qin).out[0];
    const double qv2 = forward_float(q2t, qin).out[0];
    const double bootstrap = std::min(qv1, qv2) - a * hs.logp;
    ys.push_back(tr.reward + gamma * (tr.done ? 0.0 : 1.0) * bootstrap);
  }
  return ys;
}

StepLosses SacLearner::update_step(const std::vector<Transition>& batch) {
  const double a_now = alpha();
  const double n = static_cast<double>(batch.size());
  const std::vector<double> ys = critic_target(batch, p.gamma, a_now);

  StepLosses losses;

  // critics: MSE toward the bootstrap targets
  q1.zero_grads();
  q2.zero_grads();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Transition& tr = batch[i];
    const std::vector<double> qin{tr.obs[0], tr.obs[1], tr.action_squashed};
    const Tape t1 = forward_float(q1, qin);
    const Tape t2 = forward_float(q2, qin);
    const double e1 = t1.out[0] - ys[i];
    const double e2 = t2.out[0] - ys[i];
    losses.critic1 += e1 * e1 / n;
    losses.critic2 += e2 * e2 / n;
    backward(q1, nullptr, t1, {2.0 * e1 / n});
    backward(q2, nullptr, t2, {2.0 * e2 / n});
  }
  opt_q1.step(q1.params, q1.grads);
  opt_q2.step(q2.params, q2.grads);

  // actor: minimize alpha*log pi - min(Q1,Q2) through the reparameterized
  // (and by default fake-quantized) policy
  policy.zero_grads();
  QuantizedView view;
  if (fake_quant) view = quantize_policy(policy, version);
  double mean_logp = 0.0;
  for (const Transition& tr : batch) {
    Tape tape;
    if (fake_quant) {
      const auto codes = qnet::quantize_obs(tr.obs[0], tr.obs[1]);
      tape = forward_fq(view, {codes[0], codes[1]});
    } else {
      tape = forward_float(
          policy, {obs_float_from_volts(tr.obs[0]), obs_float_from_volts(tr.obs[1])});
    }
    const double eps = normal();
    const HeadSample hs = head_sample(tape.out[0], tape.out[1], eps);
    const std::vector<double> qin{tr.obs[0], tr.obs[1], hs.a};
    const Tape tq1 = forward_float(q1, qin);
    const Tape tq2 = forward_float(q2, qin);
    const bool use1 = tq1.out[0] <= tq2.out[0];
    const double qmin = use1 ? tq1.out[0] : tq2.out[0];
    std::vector<double> gin;
    backward(use1 ? q1 : q2, nullptr, use1 ? tq1 : tq2, {1.0}, &gin);
    const double qa = gin[2];  // d min(Q)/d action
    const auto [dmu, dls] = head_backward(hs, a_now / n, -qa / n, eps);
    backward(policy, fake_quant ? &view : nullptr, tape, {dmu, dls});
    losses.actor += (a_now * hs.logp - qmin) / n;
    mean_logp += hs.logp / n;
  }
  opt_policy.step(policy.params, policy.grads);

  // temperature: minimize -log_alpha * (log pi + target_entropy), detached
  const double galpha = -(mean_logp + p.target_entropy);
  opt_alpha.step1(log_alpha, galpha);

  polyak(q1t, q1, p.tau);
  polyak(q2t, q2, p.tau);

  losses.alpha = alpha();
  losses.entropy = -mean_logp;
  if (!std::isfinite(losses.critic1) || !std::isfinite(losses.critic2) ||
      !std::isfinite(losses.actor) || !std::isfinite(log_alpha)) {
    std::ostringstream os;
    os << "sac update produced a non-finite loss: critic1=" << losses.critic1
       << " critic2=" << losses.critic2 << " actor=" << losses.actor
       << " log_alpha=" << log_alpha << " buffer=" << buffer.size();
    throw std::runtime_error(os.str());
  }
  return losses;
}

std::vector<StepLosses> SacLearner::sac_update() {
  if (buffer.size() < static_cast<std::size_t>(p.batch))
    throw std::invalid_argument("sac_update: buffer smaller than batch");
  std::vector<StepLosses> trace;
  trace.reserve(p.grad_steps);
  for (int g = 0; g < p.grad_steps; ++g) {
    trace.push_back(update_step(buffer.sample(static_cast<std::size_t>(p.batch), rng)));
  }
  ++version;
  return trace;
}

std::vector<std::uint8_t> SacLearner::export_weights() const {
  return twin::export_weights(policy, version);
}

void SacLearner::polyak(Mlp& target, const Mlp& online, double tau) {
  for (std::size_t i = 0; i < target.params.size(); ++i)
    target.params[i] = (1.0 - tau) * target.params[i] + tau * online.params[i];
}

double grad_check(Mlp& net, const std::function<double(bool)>& eval, double h) {
  net.zero_grads();
  eval(true);
  const std::vector<double> analytic = net.grads;
  double max_rel = 0.0;
  for (std::size_t i = 0; i < net.params.size(); ++i) {
    const double p0 = net.params[i];
    net.params[i] = p0 + h;
    const double lp = eval(false);
    net.params[i] = p0 - h;
    const double lm = eval(false);
    net.params[i] = p0;
    const double numeric = (lp - lm) / (2.0 * h);
    const double rel = std::fabs(analytic[i] - numeric) /
                       std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-3});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace weldloop::twin
