#pragma once

// Independent reference implementations used only to cross-check the library.
// Everything here is written naively from the governing equations, on purpose:
// a disagreement with the library points at exactly one side.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "weldloop/config.hpp"
#include "weldloop/qnet.hpp"
#include "weldloop/rng.hpp"
#include "weldloop/weldsim.hpp"

namespace oracle {

// Plain int64 walk of the quantized net, no shared helpers.
inline std::vector<std::int32_t> forward_int_ref(const weldloop::qnet::QuantizedPolicy& p,
                                                 const std::vector<std::int8_t>& obs) {
  std::vector<std::int64_t> x(obs.begin(), obs.end());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& L = p.layers[l];
    std::vector<std::int64_t> y(L.out_dim);
    for (int i = 0; i < L.out_dim; ++i) {
      std::int64_t acc = L.b[i];
      for (int j = 0; j < L.in_dim; ++j)
        acc += static_cast<std::int64_t>(L.w[static_cast<std::size_t>(i) * L.in_dim + j]) * x[j];
      if (l + 1 < p.layers.size()) {
        if (acc < 0) acc = 0;
        acc >>= L.shift;
      }
      y[i] = acc;
    }
    x = std::move(y);
  }
  std::vector<std::int32_t> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<std::int32_t>(x[i]);
  return out;
}

// Bitwise crc32 (reflected, poly 0xEDB88320), the zlib definition.
inline std::uint32_t crc32_ref(const std::uint8_t* d, std::size_t n) {
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i) {
    crc ^= d[i];
    for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
  }
  return crc ^ 0xFFFFFFFFu;
}

struct WeldStepRef {
  double m = 0;
  bool keyhole = false;
  double or_volts = 0;
  double oe_volts = 0;
};

// One step of the surrogate recurrence, noise passed in explicitly.
inline WeldStepRef weld_step_ref(const weldloop::SimParams& prm, double m, bool keyhole,
                                 double sa, double power, double or_noise, double oe_noise) {
  const auto clamp = [](double v, double lo, double hi) {
    return v < lo ? lo : (v > hi ? hi : v);
  };
  const double A = prm.a0 * (1.0 + prm.kappa * sa / prm.sa_ref);
  const double m1 = clamp(prm.lambda * m + prm.c * A * power, 0.0, prm.m_max);
  bool kh = keyhole;
  if (m1 >= prm.m_kh) kh = true;
  else if (m1 <= 0.8 * prm.m_kh) kh = false;
  const double rho = prm.rho0 * (sa / prm.sa_ref) * (1.0 - prm.w * std::min(m1, 1.0));
  const double or_mode = kh ? prm.or_kh_factor : m1 / prm.m_kh;
  const double orv = clamp(
      prm.b0 * (power / 100.0) * (1.0 - rho) + prm.or_peak * or_mode * (1.0 - rho) + or_noise,
      0.0, 10.0);
  const double oev =
      clamp(prm.e0 * std::min(m1, 1.0) + prm.e1 * (kh ? 1.0 : 0.0) + oe_noise, 0.0, 10.0);
  return {m1, kh, orv, oev};
}

inline double sa_at_ref(const std::vector<weldloop::sim::Segment>& segs, double x) {
  double cum = 0;
  for (const auto& s : segs) {
    if (x < cum + s.length_mm) return s.sa_um;
    cum += s.length_mm;
  }
  return segs.back().sa_um;
}

inline double noise_sd_at_ref(const std::vector<weldloop::sim::Segment>& segs, double x) {
  double cum = 0;
  for (const auto& s : segs) {
    if (x < cum + s.length_mm) return s.noise_sd_volts;
    cum += s.length_mm;
  }
  return segs.back().noise_sd_volts;
}

// Noise-free return of a constant-power roll-out from m = 0.
inline double const_power_return_ref(const weldloop::SimParams& prm,
                                     const std::vector<weldloop::sim::Segment>& segs,
                                     double power, int steps = 80) {
  double m = 0, ret = 0;
  bool kh = false;
  for (int t = 0; t < steps; ++t) {
    const double x = 0.5 * t;
    const auto r = weld_step_ref(prm, m, kh, sa_at_ref(segs, x), power, 0.0, 0.0);
    m = r.m;
    kh = r.keyhole;
    ret += r.or_volts / 10.0;
  }
  return ret;
}

// Density of the tanh-squashed Gaussian at `a`, evaluated as a central
// difference of the exact CDF Phi((atanh(a) - mean) / std). Independent of
// the log-domain algebra under test.
inline double squashed_logp_numeric(double mean, double stddev, double a, double h = 1e-7) {
  const auto cdf = [&](double av) -> long double {
    const long double z = (std::atanh(static_cast<long double>(av)) - mean) / stddev;
    return 0.5L * erfcl(-z / 1.4142135623730951L);
  };
  const long double dens = (cdf(a + h) - cdf(a - h)) / (2.0L * static_cast<long double>(h));
  if (!(dens > 0)) throw std::runtime_error("numeric density underflow");
  return static_cast<double>(std::log(static_cast<double>(dens)));
}

}  // namespace oracle
