#include "weldloop/qnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <string>

namespace weldloop::qnet {
namespace {

void le_put16(std::vector<std::uint8_t>& v, std::uint16_t x) {
  v.push_back(static_cast<std::uint8_t>(x & 0xff));
  v.push_back(static_cast<std::uint8_t>(x >> 8));
}

void le_put32(std::vector<std::uint8_t>& v, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) v.push_back(static_cast<std::uint8_t>((x >> (8 * i)) & 0xff));
}

std::uint16_t le_get16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t le_get32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

QuantizeResult quantize_tensor(const std::vector<double>& w) {
  double amax = 0.0;
  for (double x : w) {
    if (!std::isfinite(x)) throw std::invalid_argument("quantize_tensor: non-finite input");
    amax = std::max(amax, std::fabs(x));
  }
  QuantizeResult r;
  r.scale = (amax == 0.0) ? 1.0 : amax / 127.0;
  r.q.resize(w.size());
  for (size_t i = 0; i < w.size(); ++i) {
    const long long q = std::llround(w[i] / r.scale);  // llround: ties away from zero
    r.q[i] = static_cast<std::int8_t>(std::clamp<long long>(q, -127, 127));
  }
  return r;
}

std::int64_t activation_cap(int hidden_index) {
  const int bits = std::min(31, 12 + 4 * hidden_index);
  return (std::int64_t{1} << bits) - 1;
}

std::int64_t worst_case_accum(const QLayer& layer, std::int64_t in_max) {
  std::int64_t worst = 0;
  for (int i = 0; i < layer.out_dim; ++i) {
    std::int64_t s = 0;
    for (int j = 0; j < layer.in_dim; ++j)
      s += std::abs(static_cast<std::int64_t>(layer.w[static_cast<size_t>(i) * layer.in_dim + j])) * in_max;
    s += std::abs(static_cast<std::int64_t>(layer.b[i]));
    worst = std::max(worst, s);
  }
  return worst;
}

void validate_policy(const QuantizedPolicy& p) {
  const size_t L = p.layers.size();
  if (L == 0) throw std::invalid_argument("policy: no layers");
  if (p.dims.size() != L + 1) throw std::invalid_argument("policy: dims/layers mismatch");
  if (!(p.output_scale > 0.0f) || !std::isfinite(p.output_scale))
    throw std::invalid_argument("policy: output_scale must be finite and > 0");
  std::int64_t in_max = 127;  // int8 observation codes
  for (size_t l = 0; l < L; ++l) {
    const QLayer& q = p.layers[l];
    if (q.in_dim != p.dims[l] || q.out_dim != p.dims[l + 1])
      throw std::invalid_argument("policy: layer " + std::to_string(l) + " shape mismatch");
    if (q.w.size() != static_cast<size_t>(q.in_dim) * q.out_dim || q.b.size() != q.out_dim)
      throw std::invalid_argument("policy: layer " + std::to_string(l) + " storage mismatch");
    const std::int64_t bound = worst_case_accum(q, in_max);
    if (bound > std::numeric_limits<std::int32_t>::max())
      throw std::invalid_argument("policy: layer " + std::to_string(l) +
                                  " accumulator can overflow int32 (worst case " +
                                  std::to_string(bound) + ")");
    if (l + 1 < L) {
      const std::int64_t cap = activation_cap(static_cast<int>(l));
      if ((bound >> q.shift) > cap)
        throw std::invalid_argument("policy: layer " + std::to_string(l) +
                                    " requant shift too small for declared bitwidth");
      in_max = cap;
    } else if (q.shift != 0) {
      throw std::invalid_argument("policy: output layer must not carry a shift");
    }
  }
}

std::uint64_t op_count(const std::vector<int>& dims) {
  // MAC + bias add per row, plus relu+shift per hidden unit, plus the two
  // output scale multiplies. Input independent by construction.
  std::uint64_t ops = 0;
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::uint64_t in = static_cast<std::uint64_t>(dims[l]);
    const std::uint64_t out = static_cast<std::uint64_t>(dims[l + 1]);
    ops += out * (2 * in + 1);
    if (l + 2 < dims.size()) ops += 2 * out;  // relu + shift
  }
  ops += static_cast<std::uint64_t>(dims.back());
  return ops;
}

IntForward forward_int(const QuantizedPolicy& p, const std::vector<std::int8_t>& obs) {
  if (obs.size() != static_cast<size_t>(p.dims.front()))
    throw std::invalid_argument("forward_int: observation size mismatch");
  std::vector<std::int32_t> x(obs.begin(), obs.end());
  std::vector<std::int32_t> next;
  const size_t L = p.layers.size();
  for (size_t l = 0; l < L; ++l) {
    const QLayer& q = p.layers[l];
    next.assign(q.out_dim, 0);
    for (int i = 0; i < q.out_dim; ++i) {
      std::int64_t acc = q.b[i];
      const std::int8_t* row = q.w.data() + static_cast<size_t>(i) * q.in_dim;
      for (int j = 0; j < q.in_dim; ++j) acc += static_cast<std::int64_t>(row[j]) * x[j];
      if (l + 1 < L) {
        if (acc < 0) acc = 0;        // ReLU
        acc >>= q.shift;             // requantize (non-negative, so >> == floor div)
      }
      next[i] = static_cast<std::int32_t>(acc);  // in range per validate_policy
    }
    x.swap(next);
  }
  return IntForward{std::move(x), op_count(p.dims)};
}

double tanh_poly(double x) {
  // 8 cubic Hermite segments on [0, 4] (knot spacing 0.5), odd-reflected,
  // hard saturation past |x| = 4. Knot values/slopes match tanh, which keeps
  // the interpolation error well under the 2^-7 budget and the curve
  // monotone (Fritsch-Carlson condition holds for tanh at this spacing).
  static const struct Table {
    double v[9];
    double d[9];
    Table() {
      for (int i = 0; i <= 8; ++i) {
        v[i] = std::tanh(0.5 * i);
        d[i] = 1.0 - v[i] * v[i];
      }
    }
  } tbl;
  const double ax = std::fabs(x);
  double r;
  if (ax >= 4.0) {
    r = 1.0;
  } else {
    const int s = std::min(7, static_cast<int>(ax * 2.0));
    const double h = 0.5;
    const double t = (ax - 0.5 * s) / h;
    const double t2 = t * t, t3 = t2 * t;
    const double h00 = 2 * t3 - 3 * t2 + 1;
    const double h10 = t3 - 2 * t2 + t;
    const double h01 = -2 * t3 + 3 * t2;
    const double h11 = t3 - t2;
    r = h00 * tbl.v[s] + h10 * h * tbl.d[s] + h01 * tbl.v[s + 1] + h11 * h * tbl.d[s + 1];
  }
  return std::copysign(r, x);
}

PolicyHead head_from_acc(const IntForward& f, float output_scale) {
  if (f.acc.size() != 2) throw std::invalid_argument("head_from_acc: expected 2 outputs");
  PolicyHead h;
  const double scale = static_cast<double>(output_scale);
  h.mean = static_cast<double>(f.acc[0]) * scale;
  h.log_std = std::clamp(static_cast<double>(f.acc[1]) * scale,
                         static_cast<double>(kLogStdMin), static_cast<double>(kLogStdMax));
  h.std = std::exp(h.log_std);
  return h;
}

Action sample_action(const PolicyHead& head, double eps) {
  Action a;
  a.squashed = tanh_poly(head.mean + head.std * eps);
  a.power_watts = power_from_squashed(a.squashed);
  a.control_volts = volts_from_power(a.power_watts);
  return a;
}

double power_from_squashed(double squashed) { return 62.5 + 37.5 * squashed; }
double squashed_from_power(double power_watts) { return (power_watts - 62.5) / 37.5; }
double volts_from_power(double power_watts) { return 5.0 * (power_watts - 25.0) / 75.0; }

Action infer(const QuantizedPolicy& p, const std::vector<std::int8_t>& obs, float eps) {
  const IntForward f = forward_int(p, obs);
  const PolicyHead h = head_from_acc(f, p.output_scale);
  return sample_action(h, static_cast<double>(eps));
}

std::int8_t quantize_obs_volt(double volts) {
  if (!std::isfinite(volts)) throw std::invalid_argument("quantize_obs: non-finite voltage");
  const long long q = std::llround((volts / 10.0) * 254.0 - 127.0);
  return static_cast<std::int8_t>(std::clamp<long long>(q, -127, 127));
}

std::array<std::int8_t, 2> quantize_obs(double or_volts, double oe_volts) {
  return {quantize_obs_volt(or_volts), quantize_obs_volt(oe_volts)};
}

std::vector<std::uint8_t> encode_policy(const QuantizedPolicy& p) {
  validate_policy(p);
  std::vector<std::uint8_t> out;
  for (const QLayer& q : p.layers) {
    le_put16(out, q.out_dim);
    le_put16(out, q.in_dim);
    for (std::int8_t w : q.w) out.push_back(static_cast<std::uint8_t>(w));
    for (std::int32_t b : q.b) le_put32(out, static_cast<std::uint32_t>(b));
    out.push_back(q.shift);
  }
  std::uint32_t scale_bits;
  static_assert(sizeof(scale_bits) == sizeof(p.output_scale));
  std::memcpy(&scale_bits, &p.output_scale, 4);
  le_put32(out, scale_bits);
  le_put32(out, p.version);
  return out;
}

QuantizedPolicy decode_policy(const std::vector<std::uint8_t>& blob) {
  constexpr size_t kTrailer = 8;  // output_scale f32 + version u32
  if (blob.size() < kTrailer + 5) throw std::invalid_argument("policy blob: truncated");
  QuantizedPolicy p;
  size_t pos = 0;
  const size_t end = blob.size() - kTrailer;
  while (pos < end) {
    if (end - pos < 5) throw std::invalid_argument("policy blob: truncated layer header");
    QLayer q;
    q.out_dim = le_get16(blob.data() + pos);
    q.in_dim = le_get16(blob.data() + pos + 2);
    pos += 4;
    if (q.out_dim == 0 || q.in_dim == 0)
      throw std::invalid_argument("policy blob: zero layer dimension");
    const size_t wn = static_cast<size_t>(q.out_dim) * q.in_dim;
    const size_t need = wn + 4ull * q.out_dim + 1;
    if (end - pos < need) throw std::invalid_argument("policy blob: truncated layer");
    q.w.resize(wn);
    std::memcpy(q.w.data(), blob.data() + pos, wn);
    pos += wn;
    q.b.resize(q.out_dim);
    for (int i = 0; i < q.out_dim; ++i)
      q.b[i] = static_cast<std::int32_t>(le_get32(blob.data() + pos + 4ull * i));
    pos += 4ull * q.out_dim;
    q.shift = blob[pos++];
    if (p.layers.empty()) p.dims.push_back(q.in_dim);
    p.dims.push_back(q.out_dim);
    p.layers.push_back(std::move(q));
  }
  const std::uint32_t scale_bits = le_get32(blob.data() + end);
  std::memcpy(&p.output_scale, &scale_bits, 4);
  p.version = le_get32(blob.data() + end + 4);
  validate_policy(p);
  return p;
}

}  // namespace weldloop::qnet
