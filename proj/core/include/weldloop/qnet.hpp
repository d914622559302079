#pragma once

#include <array>
#include <cstdint>
#include <vector>

// Integer-only policy inference, mirroring the PL-side fixed-point pipeline:
// int8 weights/activations in, int32 accumulators, ReLU + arithmetic right
// shift between layers, one f32 scale at the output. weldloop::twin is the
// float-side mirror; the two must agree bit for bit.
namespace weldloop::qnet {

inline constexpr int kLogStdMin = -5;
inline constexpr int kLogStdMax = 2;
inline constexpr double kPowerMinW = 25.0;
inline constexpr double kPowerMaxW = 100.0;

// Deployed network shape (2 obs -> 2 heads). Smaller shapes are allowed for
// toy/diagnostic nets; the device asserts the deployed shape on install.
inline const std::vector<int> kArtifactDims{2, 32, 64, 2};

struct QuantizeResult {
  std::vector<std::int8_t> q;
  double scale = 1.0;
};

// Per-tensor symmetric quantization: scale = max|w| / 127, round half away
// from zero, clamp to [-127, 127]. All-zero tensors quantize with scale 1.
// Throws std::invalid_argument on non-finite input.
QuantizeResult quantize_tensor(const std::vector<double>& w);

struct QLayer {
  std::uint16_t out_dim = 0;
  std::uint16_t in_dim = 0;
  std::vector<std::int8_t> w;   // row-major out_dim x in_dim
  std::vector<std::int32_t> b;  // accumulator-domain biases
  std::uint8_t shift = 0;       // requantization shift (hidden layers only)
};

struct QuantizedPolicy {
  std::vector<int> dims;
  std::vector<QLayer> layers;
  float output_scale = 1.0f;
  std::uint32_t version = 0;
};

// Unsigned capacity of the activation register after hidden layer i
// (0-based): 12 bits, then 16, growing 4 bits per layer, capped at 31.
std::int64_t activation_cap(int hidden_index);

// Conservative worst-case |accumulator| bound of layer l for any
// representable input: max_i( sum_j |w_ij| * in_max + |b_i| ).
std::int64_t worst_case_accum(const QLayer& layer, std::int64_t in_max);

// Validates shape consistency, the no-overflow invariant (every worst-case
// accumulator fits int32), shift capacity (post-shift activations fit their
// declared bitwidth for all representable inputs), zero output-layer shift,
// and output_scale > 0. Throws std::invalid_argument.
void validate_policy(const QuantizedPolicy& p);

struct IntForward {
  std::vector<std::int32_t> acc;  // raw output-layer accumulators
  std::uint64_t op_count = 0;     // pure function of dims
};

// Bit-exact integer forward pass. obs values are int8 codes.
IntForward forward_int(const QuantizedPolicy& p, const std::vector<std::int8_t>& obs);

// Work per forward pass as a function of shape alone (input independent).
std::uint64_t op_count(const std::vector<int>& dims);

// Piecewise-cubic tanh: odd, exactly +-1 for |x| >= 4, max abs error
// <= 2^-7 on [-4, 4], monotone non-decreasing.
double tanh_poly(double x);

struct PolicyHead {
  double mean = 0.0;
  double log_std = 0.0;  // clamped to [kLogStdMin, kLogStdMax]
  double std = 1.0;
};

PolicyHead head_from_acc(const IntForward& f, float output_scale);

struct Action {
  double squashed = 0.0;     // tanh_poly(mean + std * eps), in [-1, 1]
  double power_watts = 0.0;  // 62.5 + 37.5 * squashed, in [25, 100]
  double control_volts = 0.0;  // 5 * (power - 25) / 75, in [0, 5]
};

Action sample_action(const PolicyHead& head, double eps);

// Action-map helpers (exact affine bijections).
double power_from_squashed(double squashed);
double squashed_from_power(double power_watts);
double volts_from_power(double power_watts);

// Full device-side inference: integer forward, f32 output scale, log-std
// clamp, reparameterized sample, squash. Constant op_count per call.
Action infer(const QuantizedPolicy& p, const std::vector<std::int8_t>& obs, float eps);

// Affine map of a [0,10] V observation onto int8 [-127, 127].
std::int8_t quantize_obs_volt(double volts);
std::array<std::int8_t, 2> quantize_obs(double or_volts, double oe_volts);

// Wire blob: per layer out_dim u16 | in_dim u16 | int8 weights | int32
// biases | shift u8, then output_scale f32, version u32 (all LE).
std::vector<std::uint8_t> encode_policy(const QuantizedPolicy& p);
// Throws std::invalid_argument on truncated/inconsistent blobs.
QuantizedPolicy decode_policy(const std::vector<std::uint8_t>& blob);

}  // namespace weldloop::qnet
