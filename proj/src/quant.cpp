#include "fqat/quant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace fqat::quant {

namespace {

constexpr double kExactAccumBound = 9007199254740992.0;  // 2^53

double round_code(double v, Rounding r) {
  // nearbyint under the default FP environment rounds half to even.
  return r == Rounding::NearestEven ? std::nearbyint(v) : std::floor(v);
}

std::size_t shape_product(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

// Scale/offset for one slice of data under a dynamic spec. Degenerate slices
// (all zero for Narrow, constant for Wide) fall back to scale 1 so the code
// for every element is 0 and dequantization reproduces the constant.
struct RangeParams {
  double scale;
  double offset;
};

RangeParams dynamic_params(std::span<const float> data, std::size_t begin,
                           std::size_t stride, std::size_t count,
                           std::size_t run, const QuantSpec& spec) {
  // Iterates the slice as `count` runs of `run` contiguous elements, with
  // consecutive runs `stride` apart (covers both channel axes of 2-D data).
  float lo = std::numeric_limits<float>::infinity();
  float hi = -std::numeric_limits<float>::infinity();
  for (std::size_t c = 0; c < count; ++c) {
    const float* p = data.data() + begin + c * stride;
    for (std::size_t i = 0; i < run; ++i) {
      lo = std::min(lo, p[i]);
      hi = std::max(hi, p[i]);
    }
  }
  if (spec.form == RangeForm::Narrow) {
    const double m = std::max(std::fabs(double(lo)), std::fabs(double(hi)));
    const auto lr = levels(spec.bits);
    // q_max is 0 when bits < 2 (the only non-negative code); any positive
    // scale works there since every code clamps to 0, so use the magnitude.
    const double denom = double(std::max<std::int64_t>(lr.q_max, 1));
    return {m > 0.0 ? m / denom : 1.0, 0.0};
  }
  const double range = double(hi) - double(lo);
  const double L = double(wide_levels(spec.bits));
  return {range > 0.0 ? range / L : 1.0, double(lo)};
}

struct CodeBounds {
  double lo, hi;  // clamp range as doubles (exact for all supported widths)
};

CodeBounds code_bounds(const QuantSpec& spec) {
  if (spec.form == RangeForm::Narrow) {
    const auto lr = levels(spec.bits);
    return {double(lr.q_min), double(lr.q_max)};
  }
  return {0.0, double(wide_levels(spec.bits) - 1)};
}

// Core element kernel shared by quantize / fake_quant / fake_quant_ste.
template <typename Emit>
void quantize_slice(std::span<const float> data, std::size_t begin,
                    std::size_t stride, std::size_t count, std::size_t run,
                    const QuantSpec& spec, const RangeParams& rp,
                    const CodeBounds& cb, Emit&& emit) {
  for (std::size_t c = 0; c < count; ++c) {
    const std::size_t base = begin + c * stride;
    for (std::size_t i = 0; i < run; ++i) {
      const std::size_t idx = base + i;
      const double v = (double(data[idx]) - rp.offset) / rp.scale;
      const double code = round_code(v, spec.rounding);
      const bool in_range = code >= cb.lo && code <= cb.hi;
      const double clamped = std::clamp(code, cb.lo, cb.hi);
      emit(idx, clamped, in_range);
    }
  }
}

struct SliceLayout {
  std::size_t n_slices;  // number of independent scale/offset groups
  std::size_t begin_step;
  std::size_t stride;
  std::size_t count;
  std::size_t run;
};

SliceLayout layout_for(std::span<const std::size_t> shape, std::size_t n,
                       const QuantSpec& spec) {
  if (spec.granularity == Granularity::PerTensor) {
    return {1, 0, 0, 1, n};
  }
  if (shape.size() != 2) {
    throw std::invalid_argument("per-channel quantization requires 2-D data");
  }
  const std::size_t rows = shape[0], cols = shape[1];
  if (spec.channel_axis == 0) {
    // one scale per row: slice r covers [r*cols, r*cols+cols)
    return {rows, cols, 0, 1, cols};
  }
  // one scale per column: slice c covers {c, c+cols, c+2*cols, ...}
  return {cols, 1, cols, rows, 1};
}

RangeParams params_for_slice(std::span<const float> data,
                             const SliceLayout& ly, std::size_t slice,
                             const QuantSpec& spec) {
  if (spec.mode == Mode::Static) {
    return {spec.static_params->scale, spec.static_params->offset};
  }
  return dynamic_params(data, slice * ly.begin_step, ly.stride, ly.count,
                        ly.run, spec);
}

void check_data(std::span<const float> data, std::span<const std::size_t> shape,
                const QuantSpec& spec) {
  validate(spec);
  if (data.empty()) throw std::invalid_argument("cannot quantize empty data");
  if (!shape.empty() && shape_product(shape) != data.size()) {
    throw std::invalid_argument("shape does not match data size");
  }
  if (spec.granularity == Granularity::PerChannel && shape.empty()) {
    throw std::invalid_argument("per-channel quantization requires a shape");
  }
}

}  // namespace

void validate(const QuantSpec& spec) {
  if (!(spec.bits >= 1.0 && spec.bits <= 32.0)) {
    throw std::invalid_argument("bits must lie in [1, 32], got " +
                                std::to_string(spec.bits));
  }
  if (spec.mode == Mode::Static) {
    if (!spec.static_params) {
      throw std::invalid_argument("static quantization requires calibrated parameters");
    }
    if (!(spec.static_params->scale > 0.0) ||
        !std::isfinite(spec.static_params->scale) ||
        !std::isfinite(spec.static_params->offset)) {
      throw std::invalid_argument("static scale must be finite and positive");
    }
  }
  if (spec.granularity == Granularity::PerChannel &&
      (spec.channel_axis < 0 || spec.channel_axis > 1)) {
    throw std::invalid_argument("channel_axis must be 0 or 1");
  }
}

LevelRange levels(double bits) {
  if (!(bits >= 1.0 && bits <= 32.0)) {
    throw std::invalid_argument("bits must lie in [1, 32], got " +
                                std::to_string(bits));
  }
  const auto half = std::int64_t(std::floor(std::exp2(bits - 1.0)));
  return {-half, half - 1, 2 * half};
}

std::int64_t wide_levels(double bits) {
  if (!(bits >= 1.0 && bits <= 32.0)) {
    throw std::invalid_argument("bits must lie in [1, 32], got " +
                                std::to_string(bits));
  }
  return std::int64_t(std::floor(std::exp2(bits)));
}

QuantizedTensor quantize(std::span<const float> data,
                         std::span<const std::size_t> shape,
                         const QuantSpec& spec) {
  check_data(data, shape, spec);
  const auto ly = layout_for(shape, data.size(), spec);
  const auto cb = code_bounds(spec);

  QuantizedTensor qt;
  qt.codes.resize(data.size());
  qt.shape.assign(shape.begin(), shape.end());
  if (qt.shape.empty()) qt.shape = {data.size()};
  qt.spec = spec;
  qt.scales.resize(ly.n_slices);
  qt.offsets.resize(ly.n_slices);

  for (std::size_t s = 0; s < ly.n_slices; ++s) {
    const auto rp = params_for_slice(data, ly, s, spec);
    qt.scales[s] = rp.scale;
    qt.offsets[s] = rp.offset;
    quantize_slice(data, s * ly.begin_step, ly.stride, ly.count, ly.run, spec,
                   rp, cb,
                   [&](std::size_t idx, double code, bool) {
                     qt.codes[idx] = std::int64_t(code);
                   });
  }
  return qt;
}

std::vector<float> dequantize(const QuantizedTensor& qt) {
  const QuantSpec& spec = qt.spec;
  std::vector<float> out(qt.codes.size());
  const auto ly = layout_for(qt.shape, qt.codes.size(), spec);
  if (ly.n_slices != qt.scales.size() || ly.n_slices != qt.offsets.size()) {
    throw std::invalid_argument("quantized tensor has inconsistent scale count");
  }
  for (std::size_t s = 0; s < ly.n_slices; ++s) {
    const double scale = qt.scales[s];
    const double offset = qt.offsets[s];
    for (std::size_t c = 0; c < ly.count; ++c) {
      const std::size_t base = s * ly.begin_step + c * ly.stride;
      for (std::size_t i = 0; i < ly.run; ++i) {
        out[base + i] = float(offset + scale * double(qt.codes[base + i]));
      }
    }
  }
  return out;
}

namespace {

FakeQuantResult fake_quant_impl(std::span<const float> data,
                                std::span<const std::size_t> shape,
                                const QuantSpec& spec, bool want_mask) {
  check_data(data, shape, spec);
  const auto ly = layout_for(shape, data.size(), spec);
  const auto cb = code_bounds(spec);

  FakeQuantResult r;
  r.values.resize(data.size());
  if (want_mask) r.in_range.resize(data.size());

  for (std::size_t s = 0; s < ly.n_slices; ++s) {
    const auto rp = params_for_slice(data, ly, s, spec);
    quantize_slice(data, s * ly.begin_step, ly.stride, ly.count, ly.run, spec,
                   rp, cb, [&](std::size_t idx, double code, bool in_range) {
                     r.values[idx] = float(rp.offset + rp.scale * code);
                     if (want_mask) r.in_range[idx] = in_range ? 1 : 0;
                   });
  }
  return r;
}

}  // namespace

std::vector<float> fake_quant(std::span<const float> data,
                              std::span<const std::size_t> shape,
                              const QuantSpec& spec) {
  return fake_quant_impl(data, shape, spec, /*want_mask=*/false).values;
}

FakeQuantResult fake_quant_ste(std::span<const float> data,
                               std::span<const std::size_t> shape,
                               const QuantSpec& spec) {
  return fake_quant_impl(data, shape, spec, /*want_mask=*/true);
}

std::vector<float> factorized_matmul(const QuantizedTensor& x,
                                     const QuantizedTensor& w) {
  if (x.spec.form != RangeForm::Narrow || w.spec.form != RangeForm::Narrow) {
    throw std::invalid_argument("factorized matmul requires symmetric (Narrow) codes");
  }
  if (x.scales.size() != 1 || w.scales.size() != 1) {
    throw std::invalid_argument("factorized matmul requires per-tensor scales");
  }
  if (x.shape.size() != 2 || w.shape.size() != 2 || x.shape[1] != w.shape[0]) {
    throw std::invalid_argument("factorized matmul shape mismatch");
  }
  const std::size_t m = x.shape[0], k = x.shape[1], n = w.shape[1];

  // Worst-case |accumulator| = k * qx_max * qw_max. Demanding it stays within
  // 2^53 keeps every int64 sum exact after conversion to double (and is far
  // below int64 overflow).
  const double qx = double(std::max<std::int64_t>(
      std::abs(levels(x.spec.bits).q_min), levels(x.spec.bits).q_max));
  const double qw = double(std::max<std::int64_t>(
      std::abs(levels(w.spec.bits).q_min), levels(w.spec.bits).q_max));
  if (double(k) * qx * qw > kExactAccumBound) {
    throw std::overflow_error(
        "factorized matmul accumulator bound exceeded: k * qx_max * qw_max = " +
        std::to_string(double(k) * qx * qw));
  }

  const double combined_scale = x.scales[0] * w.scales[0];
  std::vector<float> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      std::int64_t acc = 0;
      for (std::size_t t = 0; t < k; ++t) {
        acc += x.codes[i * k + t] * w.codes[t * n + j];
      }
      out[i * n + j] = float(combined_scale * double(acc));
    }
  }
  return out;
}

CalibrationStats calibrate(std::span<const float> pooled, double k_sigma) {
  if (pooled.empty()) throw std::invalid_argument("calibration requires data");
  if (!(k_sigma > 0.0)) throw std::invalid_argument("k_sigma must be positive");

  double sum = 0.0;
  for (float v : pooled) sum += double(v);
  const double mean = sum / double(pooled.size());

  double sq = 0.0;
  for (float v : pooled) {
    const double d = double(v) - mean;
    sq += d * d;
  }
  const double std_dev = std::sqrt(sq / double(pooled.size()));

  CalibrationStats st;
  st.mean = mean;
  st.std_dev = std_dev;
  st.inlier_lo = mean - k_sigma * std_dev;
  st.inlier_hi = mean + k_sigma * std_dev;
  st.count = pooled.size();
  st.degenerate = std_dev == 0.0;

  std::size_t outliers = 0;
  for (float v : pooled) {
    if (double(v) < st.inlier_lo || double(v) > st.inlier_hi) ++outliers;
  }
  st.outlier_fraction = double(outliers) / double(pooled.size());
  return st;
}

CalibrationStats calibrate(std::span<const std::span<const float>> samples,
                           double k_sigma) {
  std::size_t total = 0;
  for (const auto& s : samples) total += s.size();
  if (total == 0) throw std::invalid_argument("calibration requires data");
  std::vector<float> pooled;
  pooled.reserve(total);
  for (const auto& s : samples) pooled.insert(pooled.end(), s.begin(), s.end());
  return calibrate(std::span<const float>(pooled), k_sigma);
}

StaticParams static_params_for(const CalibrationStats& stats,
                               const QuantSpec& spec) {
  if (spec.form == RangeForm::Wide) {
    if (stats.degenerate) return {1.0, stats.mean};
    const double L = double(wide_levels(spec.bits));
    return {(stats.inlier_hi - stats.inlier_lo) / L, stats.inlier_lo};
  }
  if (stats.degenerate) return {1.0, 0.0};
  const double m =
      std::max(std::fabs(stats.inlier_lo), std::fabs(stats.inlier_hi));
  const double denom = double(std::max<std::int64_t>(levels(spec.bits).q_max, 1));
  return {m > 0.0 ? m / denom : 1.0, 0.0};
}

}  // namespace fqat::quant
