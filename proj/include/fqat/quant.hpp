#pragma once

// Fractional-bit quantization primitives: level-count laws, symmetric and
// affine quantizers, fake-quantization with straight-through gradient masks,
// integer-factorized matmul, and static range calibration.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace fqat::quant {

// How the representable code range is laid out.
//   Narrow: symmetric around zero, codes in [-floor(2^(b-1)), floor(2^(b-1))-1],
//           zero exactly representable, no offset.
//   Wide:   affine, floor(2^b) codes in [0, L-1] mapped onto [min, max].
enum class RangeForm { Narrow, Wide };

enum class Rounding {
  NearestEven,  // ties to even (IEEE default)
  Floor,
};

// Dynamic recomputes scale/offset from the tensor at hand; Static uses
// pre-calibrated parameters carried in the spec.
enum class Mode { Dynamic, Static };

enum class Granularity { PerTensor, PerChannel };

struct StaticParams {
  double scale = 1.0;
  double offset = 0.0;  // ignored for Narrow
};

struct QuantSpec {
  double bits = 8.0;  // fractional allowed, must lie in [1, 32]
  RangeForm form = RangeForm::Narrow;
  Rounding rounding = Rounding::NearestEven;
  Mode mode = Mode::Dynamic;
  Granularity granularity = Granularity::PerTensor;
  int channel_axis = 0;  // used only when granularity == PerChannel (2-D data)
  std::optional<StaticParams> static_params;  // required when mode == Static
};

// Throws std::invalid_argument on out-of-range bits, Static without params,
// non-positive static scale, or PerChannel with a bad axis.
void validate(const QuantSpec& spec);

struct LevelRange {
  std::int64_t q_min = 0;
  std::int64_t q_max = 0;
  std::int64_t count = 0;
};

// Signed symmetric range for fractional bit-width b:
//   q_min = -floor(2^(b-1)), q_max = floor(2^(b-1)) - 1.
LevelRange levels(double bits);

// Level count for the affine form: L = floor(2^b), codes in [0, L-1].
std::int64_t wide_levels(double bits);

struct QuantizedTensor {
  std::vector<std::int64_t> codes;
  std::vector<std::size_t> shape;
  // One entry for PerTensor; shape[channel_axis] entries for PerChannel.
  std::vector<double> scales;
  std::vector<double> offsets;
  QuantSpec spec;

  std::size_t size() const { return codes.size(); }
};

// data is row-major with the given shape (shape may be empty for flat data;
// it is required for PerChannel). Dynamic mode derives scale/offset from the
// data; Static mode takes them from spec.static_params.
QuantizedTensor quantize(std::span<const float> data,
                         std::span<const std::size_t> shape,
                         const QuantSpec& spec);

std::vector<float> dequantize(const QuantizedTensor& qt);

// quantize followed by dequantize, without materializing the codes.
std::vector<float> fake_quant(std::span<const float> data,
                              std::span<const std::size_t> shape,
                              const QuantSpec& spec);

struct FakeQuantResult {
  std::vector<float> values;
  // in_range[i] is true when the unclamped code fell inside [q_min, q_max]
  // (or [0, L-1]); the straight-through estimator passes gradient exactly
  // where this mask is true and blocks it where clamping saturated.
  std::vector<std::uint8_t> in_range;
};

FakeQuantResult fake_quant_ste(std::span<const float> data,
                               std::span<const std::size_t> shape,
                               const QuantSpec& spec);

// Exact integer-domain matmul on Narrow per-tensor codes:
//   result = (s_x * s_w) * (codes_x @ codes_w)
// x is [m,k], w is [k,n]; accumulation is int64 and the code magnitudes are
// validated up front so every accumulator stays exactly representable
// (k * qx_max * qw_max <= 2^53, which also rules out int64 overflow).
// Throws std::invalid_argument on shape/spec mismatch, std::overflow_error
// when the bound fails.
std::vector<float> factorized_matmul(const QuantizedTensor& x,
                                     const QuantizedTensor& w);

struct CalibrationStats {
  double mean = 0.0;
  double std_dev = 0.0;       // population standard deviation
  double inlier_lo = 0.0;     // mean - k*std
  double inlier_hi = 0.0;     // mean + k*std
  double outlier_fraction = 0.0;
  std::size_t count = 0;
  bool degenerate = false;    // zero spread; quantizer falls back to scale 1
};

// Pools every element of every sample and computes mean/std plus the
// k-sigma inlier band. Throws std::invalid_argument when no data is given.
CalibrationStats calibrate(std::span<const std::span<const float>> samples,
                           double k_sigma);
CalibrationStats calibrate(std::span<const float> pooled, double k_sigma);

// Converts calibration stats into frozen affine parameters for a Wide spec:
// offset = inlier_lo, scale = (inlier_hi - inlier_lo) / L. Degenerate stats
// yield scale 1 around the mean. Narrow specs take scale = max(|lo|,|hi|)/q_max.
StaticParams static_params_for(const CalibrationStats& stats, const QuantSpec& spec);

}  // namespace fqat::quant
