#include "weldloop/twin.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>

#include "weldloop/rng.hpp"

namespace weldloop::twin {

Mlp::Mlp(std::vector<int> dims_) : dims(std::move(dims_)) {
  if (dims.size() < 2) throw std::invalid_argument("mlp: need at least one layer");
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Offsets o;
    o.w = n;
    n += static_cast<std::size_t>(dims[l]) * dims[l + 1];
    o.b = n;
    n += dims[l + 1];
    off.push_back(o);
  }
  params.assign(n, 0.0);
  grads.assign(n, 0.0);
}

void Mlp::zero_grads() { std::fill(grads.begin(), grads.end(), 0.0); }

Mlp make_mlp(const std::vector<int>& dims, std::uint64_t seed, std::uint32_t net_id,
             double final_scale) {
  Mlp net(dims);
  const int L = net.layer_count();
  for (int l = 0; l < L; ++l) {
    const double bound = (l + 1 == L) ? final_scale : 1.0 / std::sqrt(dims[l]);
    const std::size_t nw = static_cast<std::size_t>(dims[l]) * dims[l + 1];
    for (std::size_t i = 0; i < nw; ++i) {
      const double u =
          rng::uniform01(rng::key(seed, rng::kPolicyInit, net_id * 1024u + l, static_cast<std::uint64_t>(i)));
      net.w(l)[i] = (2.0 * u - 1.0) * bound;
    }
    // biases stay zero
  }
  return net;
}

QuantizedView quantize_policy(const Mlp& net, std::uint32_t version) {
  QuantizedView view;
  const int L = net.layer_count();
  view.policy.dims = net.dims;
  view.policy.version = version;
  double s_in = 1.0 / 127.0;  // int8 observation codes span [-1, 1]
  std::int64_t in_max = 127;
  for (int l = 0; l < L; ++l) {
    const int in = net.dims[l], out = net.dims[l + 1];
    std::vector<double> wf(net.w(l), net.w(l) + static_cast<std::size_t>(in) * out);
    const qnet::QuantizeResult qr = qnet::quantize_tensor(wf);
    qnet::QLayer layer;
    layer.in_dim = static_cast<std::uint16_t>(in);
    layer.out_dim = static_cast<std::uint16_t>(out);
    layer.w = qr.q;
    layer.b.resize(out);
    const double bias_scale = s_in * qr.scale;
    for (int i = 0; i < out; ++i) {
      const long long q = std::llround(net.b(l)[i] / bias_scale);
      layer.b[i] = static_cast<std::int32_t>(std::clamp<long long>(q, -2147483647LL, 2147483647LL));
    }
    view.w_off.push_back(view.w_hat.size());
    for (std::int8_t q : layer.w) view.w_hat.push_back(static_cast<double>(q) * qr.scale);
    if (l + 1 < L) {
      const std::int64_t cap = qnet::activation_cap(l);
      const std::int64_t bound = qnet::worst_case_accum(layer, in_max);
      std::uint8_t shift = 0;
      while ((bound >> shift) > cap) ++shift;
      layer.shift = shift;
      in_max = cap;
      view.s_w.push_back(qr.scale);
      view.s_in.push_back(s_in);
      s_in = s_in * qr.scale * static_cast<double>(std::int64_t{1} << shift);
    } else {
      layer.shift = 0;
      view.s_w.push_back(qr.scale);
      view.s_in.push_back(s_in);
      view.policy.output_scale = static_cast<float>(s_in * qr.scale);
    }
    view.policy.layers.push_back(std::move(layer));
  }
  qnet::validate_policy(view.policy);
  return view;
}

double obs_float_from_volts(double volts) { return (volts / 10.0) * 2.0 - 1.0; }

Tape forward_float(const Mlp& net, const std::vector<double>& in) {
  if (in.size() != static_cast<std::size_t>(net.dims.front()))
    throw std::invalid_argument("forward_float: input size mismatch");
  Tape tape;
  const int L = net.layer_count();
  std::vector<double> x = in;
  for (int l = 0; l < L; ++l) {
    tape.x.push_back(x);
    const int nin = net.dims[l], nout = net.dims[l + 1];
    std::vector<double> pre(nout);
    for (int i = 0; i < nout; ++i) {
      double acc = net.b(l)[i];
      const double* row = net.w(l) + static_cast<std::size_t>(i) * nin;
      for (int j = 0; j < nin; ++j) acc += row[j] * x[j];
      pre[i] = acc;
    }
    if (l + 1 < L) {
      std::vector<std::uint8_t> mask(nout);
      for (int i = 0; i < nout; ++i) {
        mask[i] = pre[i] > 0.0;
        if (!mask[i]) pre[i] = 0.0;
      }
      tape.mask.push_back(std::move(mask));
      x = std::move(pre);
    } else {
      tape.out = std::move(pre);
    }
  }
  return tape;
}

Tape forward_fq(const QuantizedView& view, const std::vector<std::int8_t>& obs_codes) {
  const qnet::QuantizedPolicy& p = view.policy;
  if (obs_codes.size() != static_cast<std::size_t>(p.dims.front()))
    throw std::invalid_argument("forward_fq: input size mismatch");
  Tape tape;
  tape.fq = true;
  const int L = static_cast<int>(p.layers.size());
  std::vector<double> xq(obs_codes.begin(), obs_codes.end());  // integer codes
  for (int l = 0; l < L; ++l) {
    const qnet::QLayer& q = p.layers[l];
    // tape carries the dequantized values the STE gradient sees
    std::vector<double> xhat(xq.size());
    for (std::size_t j = 0; j < xq.size(); ++j) xhat[j] = xq[j] * view.s_in[l];
    tape.x.push_back(std::move(xhat));
    std::vector<double> acc(q.out_dim);
    for (int i = 0; i < q.out_dim; ++i) {
      double a = static_cast<double>(q.b[i]);
      const std::int8_t* row = q.w.data() + static_cast<std::size_t>(i) * q.in_dim;
      for (int j = 0; j < q.in_dim; ++j) a += static_cast<double>(row[j]) * xq[j];
      acc[i] = a;  // exact: integers well below 2^53
    }
    if (l + 1 < L) {
      std::vector<std::uint8_t> mask(q.out_dim);
      for (int i = 0; i < q.out_dim; ++i) {
        mask[i] = acc[i] > 0.0;
        if (!mask[i]) acc[i] = 0.0;
        acc[i] = std::floor(std::ldexp(acc[i], -q.shift));
      }
      tape.mask.push_back(std::move(mask));
      xq = std::move(acc);
    } else {
      tape.out.resize(q.out_dim);
      for (int i = 0; i < q.out_dim; ++i)
        tape.out[i] = acc[i] * static_cast<double>(p.output_scale);
    }
  }
  return tape;
}

void backward(Mlp& net, const QuantizedView* view, const Tape& tape,
              const std::vector<double>& grad_out, std::vector<double>* grad_in) {
  const int L = net.layer_count();
  if (tape.x.size() != static_cast<std::size_t>(L) ||
      grad_out.size() != static_cast<std::size_t>(net.dims.back()))
    throw std::invalid_argument("backward: tape/grad shape mismatch");
  std::vector<double> g = grad_out;
  for (int l = L - 1; l >= 0; --l) {
    const int nin = net.dims[l], nout = net.dims[l + 1];
    const std::vector<double>& x = tape.x[l];
    const double* w_used = view ? view->w_hat.data() + view->w_off[l] : net.w(l);
    double* gw = net.gw(l);
    double* gb = net.gb(l);
    std::vector<double> gx(nin, 0.0);
    for (int i = 0; i < nout; ++i) {
      const double gi = g[i];
      gb[i] += gi;
      const double* row = w_used + static_cast<std::size_t>(i) * nin;
      double* grow = gw + static_cast<std::size_t>(i) * nin;
      for (int j = 0; j < nin; ++j) {
        grow[j] += gi * x[j];
        gx[j] += row[j] * gi;
      }
    }
    if (l > 0) {
      const std::vector<std::uint8_t>& mask = tape.mask[l - 1];
      for (int j = 0; j < nin; ++j) gx[j] = mask[j] ? gx[j] : 0.0;
      g = std::move(gx);
    } else if (grad_in) {
      *grad_in = std::move(gx);
    }
  }
}

qnet::PolicyHead fake_quant_forward(const Mlp& policy, const std::array<double, 2>& obs_volts) {
  const QuantizedView view = quantize_policy(policy, 0);
  const std::array<std::int8_t, 2> codes = qnet::quantize_obs(obs_volts[0], obs_volts[1]);
  const Tape tape = forward_fq(view, {codes[0], codes[1]});
  qnet::PolicyHead h;
  h.mean = tape.out[0];
  h.log_std = std::clamp(tape.out[1], static_cast<double>(qnet::kLogStdMin),
                         static_cast<double>(qnet::kLogStdMax));
  h.std = std::exp(h.log_std);
  return h;
}

std::vector<std::uint8_t> export_weights(const Mlp& policy, std::uint32_t version) {
  return qnet::encode_policy(quantize_policy(policy, version).policy);
}

HeadSample head_sample(double mean_raw, double ls_raw, double eps) {
  HeadSample h;
  h.mean = mean_raw;
  h.ls_raw = ls_raw;
  h.ls = std::clamp(ls_raw, static_cast<double>(qnet::kLogStdMin),
                    static_cast<double>(qnet::kLogStdMax));
  h.ls_active = ls_raw > qnet::kLogStdMin && ls_raw < qnet::kLogStdMax;
  h.std = std::exp(h.ls);
  h.u = h.mean + h.std * eps;
  h.a = std::tanh(h.u);
  // log(1 - tanh(u)^2) = 2*(log 2 - |u| - softplus(-2|u|)), stable for all u
  const double au = std::fabs(h.u);
  const double log1m_a2 = 2.0 * (std::log(2.0) - au - std::log1p(std::exp(-2.0 * au)));
  constexpr double kLogSqrt2Pi = 0.9189385332046727;
  h.logp = -0.5 * eps * eps - kLogSqrt2Pi - h.ls - log1m_a2;
  return h;
}

std::array<double, 2> head_backward(const HeadSample& h, double dl_dlogp, double dl_da,
                                    double eps) {
  const double one_m_a2 = 1.0 - h.a * h.a;
  const double du_dls = h.std * eps;
  const double dmu = dl_dlogp * (2.0 * h.a) + dl_da * one_m_a2;
  double dls = dl_dlogp * (-1.0 + 2.0 * h.a * du_dls) + dl_da * one_m_a2 * du_dls;
  if (!h.ls_active) dls = 0.0;
  return {dmu, dls};
}

}  // namespace weldloop::twin
