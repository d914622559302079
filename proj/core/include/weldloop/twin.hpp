#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "weldloop/config.hpp"
#include "weldloop/qnet.hpp"

// Training-side mirror of the integer inference engine plus the SAC learner.
// Two forward routes exist on purpose: the float route (smooth, used for
// gradient checking) and the fake-quant route, which reproduces the device's
// integer arithmetic in doubles (all intermediates are integers < 2^53, so
// the two sides agree bit for bit). Backprop is shared: the tape records the
// values each route actually used and the straight-through estimator treats
// every quantizer as identity.
namespace weldloop::twin {

// Dense MLP, parameters in one flat vector (weights row-major then biases,
// layer by layer) so the optimizer and finite differencing stay trivial.
struct Mlp {
  std::vector<int> dims;
  std::vector<double> params;
  std::vector<double> grads;

  struct Offsets {
    std::size_t w = 0;
    std::size_t b = 0;
  };
  std::vector<Offsets> off;

  Mlp() = default;
  explicit Mlp(std::vector<int> dims_);

  int layer_count() const { return static_cast<int>(dims.size()) - 1; }
  double* w(int l) { return params.data() + off[l].w; }
  const double* w(int l) const { return params.data() + off[l].w; }
  double* b(int l) { return params.data() + off[l].b; }
  const double* b(int l) const { return params.data() + off[l].b; }
  double* gw(int l) { return grads.data() + off[l].w; }
  double* gb(int l) { return grads.data() + off[l].b; }
  void zero_grads();
};

// Deterministic init: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) hidden
// layers, uniform(-final_scale, +final_scale) output layer, zero biases.
// Counter-based draws keyed by (seed, net_id, layer, index).
Mlp make_mlp(const std::vector<int>& dims, std::uint64_t seed, std::uint32_t net_id,
             double final_scale);

// Quantized snapshot of an Mlp: the exportable artifact plus the scale
// bookkeeping the fake-quant route needs.
struct QuantizedView {
  qnet::QuantizedPolicy policy;
  std::vector<double> s_w;    // per-layer weight scale
  std::vector<double> s_in;   // activation scale entering each layer
  std::vector<double> w_hat;  // dequantized weights, flat in Mlp layout order
  std::vector<std::size_t> w_off;
};

QuantizedView quantize_policy(const Mlp& net, std::uint32_t version);

// Forward tape: per-layer inputs in the value domain the route actually used
// (dequantized codes on the fake-quant route), ReLU masks from the
// pre-activation sign, and the raw network outputs.
struct Tape {
  std::vector<std::vector<double>> x;
  std::vector<std::vector<std::uint8_t>> mask;  // hidden layers only
  std::vector<double> out;
  bool fq = false;
};

// Input maps. Float route: affine [0,10] V -> [-1,1]. Fake-quant route goes
// through the int8 observation codes (qnet::quantize_obs_volt).
double obs_float_from_volts(double volts);

Tape forward_float(const Mlp& net, const std::vector<double>& in);
Tape forward_fq(const QuantizedView& view, const std::vector<std::int8_t>& obs_codes);

// Shared reverse pass. Accumulates into net.grads; `view` selects the
// dequantized weights when the tape came from the fake-quant route. If
// `grad_in` is non-null it receives dL/d(input).
void backward(Mlp& net, const QuantizedView* view, const Tape& tape,
              const std::vector<double>& grad_out, std::vector<double>* grad_in = nullptr);

// Fake-quantized policy forward: volts in, device-identical PolicyHead out.
qnet::PolicyHead fake_quant_forward(const Mlp& policy, const std::array<double, 2>& obs_volts);

// Wire blob of the current weights (layout owned by qnet).
std::vector<std::uint8_t> export_weights(const Mlp& policy, std::uint32_t version);

// Tanh-squashed Gaussian head with the change-of-variables correction.
// Training uses exact tanh; only the device squashes with tanh_poly.
struct HeadSample {
  double mean = 0;
  double ls_raw = 0;
  double ls = 0;  // clamped log-std
  double std = 1;
  double u = 0;
  double a = 0;
  double logp = 0;
  bool ls_active = true;  // clamp pass-through for the log-std gradient
};

HeadSample head_sample(double mean_raw, double ls_raw, double eps);

// d(loss)/d(mean_raw, ls_raw) for a loss with direct derivatives w.r.t. the
// sample's logp and squashed action.
std::array<double, 2> head_backward(const HeadSample& h, double dl_dlogp, double dl_da,
                                    double eps);

struct Transition {
  std::array<double, 2> obs;  // volts
  double action_squashed = 0;
  double reward = 0;
  std::array<double, 2> next_obs;  // volts
  bool done = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);
  void push(const Transition& t);
  std::size_t size() const;
  std::size_t inserted() const { return count_; }
  // i-th oldest retained transition.
  const Transition& at(std::size_t i) const;
  // Uniform batch without replacement (Floyd's algorithm).
  std::vector<Transition> sample(std::size_t k, std::mt19937_64& rng) const;

 private:
  std::vector<Transition> data_;
  std::size_t cap_;
  std::size_t count_ = 0;
};

// One-tensor Adam with bias correction.
struct Adam {
  double lr, beta1, beta2, eps;
  std::vector<double> m, v;
  std::uint64_t t = 0;

  Adam(std::size_t n, double lr_, double b1, double b2, double eps_);
  void step(std::vector<double>& params, const std::vector<double>& grads);
  void step1(double& param, double grad);  // scalar convenience (n == 1)
};

struct StepLosses {
  double critic1 = 0;
  double critic2 = 0;
  double actor = 0;
  double alpha = 0;
  double entropy = 0;  // batch estimate, -mean log pi
};

class SacLearner {
 public:
  SacLearner(const SacParams& p, std::uint64_t seed);

  // Bootstrap targets y = r + gamma*(1-done)*(min Q_target(s',a') - alpha
  // * log pi(a'|s')) with a' freshly sampled from the current policy.
  std::vector<double> critic_target(const std::vector<Transition>& batch, double gamma,
                                    double alpha);

  // One gradient step on an explicit batch: critics, then actor (through the
  // fake-quantized policy unless fake_quant is off), then temperature, then
  // polyak targets. Throws std::runtime_error on a non-finite loss.
  StepLosses update_step(const std::vector<Transition>& batch);

  // Full training iteration: grad_steps sampled batches.
  std::vector<StepLosses> sac_update();

  std::vector<std::uint8_t> export_weights() const;
  double alpha() const;

  SacParams p;
  Mlp policy, q1, q2, q1t, q2t;
  double log_alpha = 0.0;
  Adam opt_policy, opt_q1, opt_q2, opt_alpha;
  ReplayBuffer buffer;
  std::mt19937_64 rng;
  std::uint32_t version = 1;
  bool fake_quant = true;

 private:
  double normal();
  void polyak(Mlp& target, const Mlp& online, double tau);
};

// Max relative error between the analytic gradient left in net.grads by
// eval(true) and central finite differences of eval(false) over net.params.
double grad_check(Mlp& net, const std::function<double(bool with_grad)>& eval,
                  double h = 1e-5);

}  // namespace weldloop::twin
