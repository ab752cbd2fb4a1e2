#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "fqat/quant.hpp"
#include "test_util.hpp"

using namespace fqat::quant;
using testutil::gaussian_floats;
using testutil::uniform_floats;

namespace {

QuantSpec narrow_spec(double bits, Rounding r = Rounding::NearestEven) {
  QuantSpec s;
  s.bits = bits;
  s.form = RangeForm::Narrow;
  s.rounding = r;
  return s;
}

QuantSpec wide_spec(double bits, Rounding r = Rounding::NearestEven) {
  QuantSpec s;
  s.bits = bits;
  s.form = RangeForm::Wide;
  s.rounding = r;
  return s;
}

double mse(const std::vector<float>& a, const std::vector<float>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    acc += d * d;
  }
  return acc / double(a.size());
}

bool bitwise_equal(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("symmetric level ranges match hand-computed values") {
  struct Row {
    double bits;
    std::int64_t q_min, q_max, count;
  };
  // Frozen by hand: half = floor(2^(bits-1)), range [-half, half-1].
  const Row rows[] = {
      {1.0, -1, 0, 2},          {2.0, -2, 1, 4},
      {4.0, -8, 7, 16},         {4.25, -9, 8, 18},
      {4.5, -11, 10, 22},       {4.75, -13, 12, 26},
      {5.0, -16, 15, 32},       {5.5, -22, 21, 44},
      {6.0, -32, 31, 64},       {7.0, -64, 63, 128},
      {8.0, -128, 127, 256},    {16.0, -32768, 32767, 65536},
      {32.0, -2147483648LL, 2147483647LL, 4294967296LL},
  };
  for (const auto& r : rows) {
    CAPTURE(r.bits);
    const auto lr = levels(r.bits);
    CHECK(lr.q_min == r.q_min);
    CHECK(lr.q_max == r.q_max);
    CHECK(lr.count == r.count);
  }
}

TEST_CASE("affine level counts match hand-computed values") {
  CHECK(wide_levels(1.0) == 2);
  CHECK(wide_levels(2.0) == 4);
  CHECK(wide_levels(4.5) == 22);   // floor(22.627)
  CHECK(wide_levels(5.5) == 45);   // floor(45.254)
  CHECK(wide_levels(8.0) == 256);
  CHECK(wide_levels(16.0) == 65536);
  CHECK(wide_levels(32.0) == 4294967296LL);
}

TEST_CASE("bit-width domain is [1, 32]") {
  CHECK_THROWS_AS(levels(0.99), std::invalid_argument);
  CHECK_THROWS_AS(levels(32.01), std::invalid_argument);
  CHECK_THROWS_AS(wide_levels(0.0), std::invalid_argument);
  CHECK_THROWS_AS(validate(narrow_spec(0.5)), std::invalid_argument);
  CHECK_THROWS_AS(validate(narrow_spec(33.0)), std::invalid_argument);
  CHECK_NOTHROW(validate(narrow_spec(1.0)));
  CHECK_NOTHROW(validate(narrow_spec(32.0)));
}

TEST_CASE("level range laws hold across the fractional grid") {
  for (double b = 1.0; b <= 32.0; b += 0.25) {
    CAPTURE(b);
    const auto lr = levels(b);
    CHECK(lr.count == lr.q_max - lr.q_min + 1);
    CHECK(lr.q_min == -(lr.q_max + 1));
    // Affine spends the sign bit on range: at least as many levels.
    CHECK(wide_levels(b) >= lr.count);
  }
  // Level counts are non-decreasing in bits.
  std::int64_t prev_n = 0, prev_w = 0;
  for (double b = 1.0; b <= 32.0; b += 0.125) {
    CHECK(levels(b).count >= prev_n);
    CHECK(wide_levels(b) >= prev_w);
    prev_n = levels(b).count;
    prev_w = wide_levels(b);
  }
}

TEST_CASE("symmetric quantization reproduces frozen examples") {
  SUBCASE("three-point tensor at 4 bits") {
    const std::vector<float> w = {-3.0f, 0.0f, 3.0f};
    const auto qt = quantize(w, {}, narrow_spec(4.0));
    REQUIRE(qt.scales.size() == 1);
    CHECK(qt.scales[0] == doctest::Approx(3.0 / 7.0).epsilon(1e-15));
    CHECK(qt.offsets[0] == 0.0);
    REQUIRE(qt.codes.size() == 3);
    CHECK(qt.codes[0] == -7);
    CHECK(qt.codes[1] == 0);
    CHECK(qt.codes[2] == 7);
    // Extremes reconstruct exactly: scale * q_max returns the float max.
    const auto back = dequantize(qt);
    CHECK(back[0] == -3.0f);
    CHECK(back[1] == 0.0f);
    CHECK(back[2] == 3.0f);
  }
  SUBCASE("identity matrix at 8 bits round-trips exactly") {
    const std::vector<float> eye = {1.0f, 0.0f, 0.0f, 1.0f};
    const std::size_t shape[] = {2, 2};
    const auto qt = quantize(eye, shape, narrow_spec(8.0));
    CHECK(qt.scales[0] == doctest::Approx(1.0 / 127.0).epsilon(1e-15));
    CHECK(qt.codes == std::vector<std::int64_t>{127, 0, 0, 127});
    CHECK(bitwise_equal(dequantize(qt), eye));
  }
  SUBCASE("all-zero tensor quantizes to zero codes with unit scale") {
    const std::vector<float> z(5, 0.0f);
    const auto qt = quantize(z, {}, narrow_spec(6.0));
    CHECK(qt.scales[0] == 1.0);
    for (auto c : qt.codes) CHECK(c == 0);
    CHECK(bitwise_equal(dequantize(qt), z));
  }
}

TEST_CASE("affine quantization reproduces frozen examples") {
  SUBCASE("unit interval at 8 bits") {
    const std::vector<float> w = {0.0f, 1.0f};
    const auto qt = quantize(w, {}, wide_spec(8.0));
    CHECK(qt.scales[0] == 1.0 / 256.0);  // exact: power-of-two divisor
    CHECK(qt.offsets[0] == 0.0);
    CHECK(qt.codes[0] == 0);
    CHECK(qt.codes[1] == 255);  // top edge saturates at L-1
    const auto back = dequantize(qt);
    CHECK(back[0] == 0.0f);
    CHECK(back[1] == float(255.0 / 256.0));
  }
  SUBCASE("constant tensor maps to code zero at its own offset") {
    const std::vector<float> w = {5.0f, 5.0f, 5.0f};
    const auto qt = quantize(w, {}, wide_spec(8.0));
    CHECK(qt.scales[0] == 1.0);
    CHECK(qt.offsets[0] == 5.0);
    for (auto c : qt.codes) CHECK(c == 0);
    CHECK(bitwise_equal(dequantize(qt), w));
  }
  SUBCASE("two-bit range splits into four levels") {
    const std::vector<float> w = {-1.0f, 2.0f};
    const auto qt = quantize(w, {}, wide_spec(2.0));
    CHECK(qt.scales[0] == 0.75);
    CHECK(qt.offsets[0] == -1.0);
    CHECK(qt.codes == std::vector<std::int64_t>{0, 3});
  }
}

TEST_CASE("library agrees with the scalar reference on random tensors") {
  const double bit_grid[] = {1.0, 1.5,  2.0, 3.0,  4.0,  4.25, 4.5, 4.75,
                             5.0, 5.5,  6.0, 8.0,  12.0, 16.0, 24.0, 32.0};
  std::uint64_t seed = 7001;
  for (RangeForm form : {RangeForm::Narrow, RangeForm::Wide}) {
    for (Rounding r : {Rounding::NearestEven, Rounding::Floor}) {
      for (double bits : bit_grid) {
        for (std::size_t n : {1u, 7u, 64u, 256u}) {
          CAPTURE(int(form));
          CAPTURE(int(r));
          CAPTURE(bits);
          CAPTURE(n);
          auto data = gaussian_floats(n, seed++);
          QuantSpec spec = form == RangeForm::Narrow ? narrow_spec(bits, r)
                                                     : wide_spec(bits, r);
          const auto ref = testutil::oracle::reference_quant(data, spec);
          const auto qt = quantize(data, {}, spec);
          REQUIRE(qt.scales.size() == 1);
          CHECK(qt.scales[0] == ref.scale);
          CHECK(qt.offsets[0] == ref.offset);
          const auto fq = fake_quant_ste(data, {}, spec);
          for (std::size_t i = 0; i < n; ++i) {
            REQUIRE(qt.codes[i] == ref.codes[i]);
            REQUIRE(fq.values[i] == ref.dequant[i]);
            REQUIRE(bool(fq.in_range[i]) == ref.in_range[i]);
          }
          CHECK(bitwise_equal(dequantize(qt), fq.values));
        }
      }
    }
  }
}

TEST_CASE("per-channel slices match per-tensor quantization of each slice") {
  const std::size_t rows = 6, cols = 9;
  auto data = gaussian_floats(rows * cols, 4242);
  const std::size_t shape[] = {rows, cols};

  SUBCASE("axis 0: one scale per row") {
    QuantSpec spec = narrow_spec(5.5);
    spec.granularity = Granularity::PerChannel;
    spec.channel_axis = 0;
    const auto qt = quantize(data, shape, spec);
    REQUIRE(qt.scales.size() == rows);
    for (std::size_t i = 0; i < rows; ++i) {
      std::vector<float> row(data.begin() + std::ptrdiff_t(i * cols),
                             data.begin() + std::ptrdiff_t((i + 1) * cols));
      const auto solo = quantize(row, {}, narrow_spec(5.5));
      CHECK(qt.scales[i] == solo.scales[0]);
      for (std::size_t j = 0; j < cols; ++j) {
        CHECK(qt.codes[i * cols + j] == solo.codes[j]);
      }
    }
  }
  SUBCASE("axis 1: one scale per column") {
    QuantSpec spec = wide_spec(6.0);
    spec.granularity = Granularity::PerChannel;
    spec.channel_axis = 1;
    const auto qt = quantize(data, shape, spec);
    REQUIRE(qt.scales.size() == cols);
    for (std::size_t j = 0; j < cols; ++j) {
      std::vector<float> col;
      for (std::size_t i = 0; i < rows; ++i) col.push_back(data[i * cols + j]);
      const auto solo = quantize(col, {}, wide_spec(6.0));
      CHECK(qt.scales[j] == solo.scales[0]);
      CHECK(qt.offsets[j] == solo.offsets[0]);
      for (std::size_t i = 0; i < rows; ++i) {
        CHECK(qt.codes[i * cols + j] == solo.codes[i]);
      }
    }
    CHECK(bitwise_equal(dequantize(qt), fake_quant(data, shape, spec)));
  }
}

TEST_CASE("static mode uses the provided parameters verbatim") {
  auto data = gaussian_floats(128, 99);
  QuantSpec spec = wide_spec(8.0);
  spec.mode = Mode::Static;
  spec.static_params = StaticParams{0.01, -1.25};
  const auto qt = quantize(data, {}, spec);
  CHECK(qt.scales[0] == 0.01);
  CHECK(qt.offsets[0] == -1.25);
  const auto fq = fake_quant_ste(data, {}, spec);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto ref = testutil::oracle::scalar_quant(double(data[i]), 0.01, -1.25,
                                                    0, 255, false);
    CHECK(qt.codes[i] == ref.code);
    CHECK(fq.values[i] == float(ref.dequant));
    CHECK(bool(fq.in_range[i]) == ref.in_range);
  }
  // Values far outside the frozen window must be flagged as clamped.
  const std::vector<float> wild = {-100.0f, 0.0f, 100.0f};
  const auto w = fake_quant_ste(wild, {}, spec);
  CHECK(w.in_range[0] == 0);
  CHECK(w.in_range[1] == 1);
  CHECK(w.in_range[2] == 0);
}

TEST_CASE("codes always stay inside the representable range (fuzz)") {
  std::mt19937_64 rng(20260814);
  std::uniform_real_distribution<double> bits_dist(1.0, 32.0);
  std::uniform_real_distribution<double> scale_dist(-6.0, 6.0);
  for (int trial = 0; trial < 200; ++trial) {
    const double bits = bits_dist(rng);
    const double spread = std::exp2(scale_dist(rng));
    auto data = gaussian_floats(33, rng(), scale_dist(rng), spread);
    for (RangeForm form : {RangeForm::Narrow, RangeForm::Wide}) {
      for (Rounding r : {Rounding::NearestEven, Rounding::Floor}) {
        QuantSpec spec = form == RangeForm::Narrow ? narrow_spec(bits, r)
                                                   : wide_spec(bits, r);
        const auto qt = quantize(data, {}, spec);
        std::int64_t lo = 0, hi = 0;
        if (form == RangeForm::Narrow) {
          lo = levels(bits).q_min;
          hi = levels(bits).q_max;
        } else {
          hi = wide_levels(bits) - 1;
        }
        for (auto c : qt.codes) {
          REQUIRE(c >= lo);
          REQUIRE(c <= hi);
        }
      }
    }
  }
}

TEST_CASE("round-trip error is bounded by the step size") {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    auto data = gaussian_floats(257, seed);
    for (double bits : {2.0, 4.0, 4.5, 5.5, 8.0}) {
      CAPTURE(bits);
      // absolute slack for the final float32 rounding of the dequantized value
      const double eps32 = 6e-7;
      {
        const auto qt = quantize(data, {}, narrow_spec(bits));
        const auto back = dequantize(qt);
        const double bound = qt.scales[0] * 0.5 * (1.0 + 1e-9) + eps32;
        for (std::size_t i = 0; i < data.size(); ++i) {
          REQUIRE(std::fabs(double(back[i]) - double(data[i])) <= bound);
        }
      }
      {
        // Affine: interior points are within half a step, but the top edge
        // saturates at L-1 and may be a full step away.
        const auto qt = quantize(data, {}, wide_spec(bits));
        const auto back = dequantize(qt);
        const double bound = qt.scales[0] * (1.0 + 1e-9) + eps32;
        for (std::size_t i = 0; i < data.size(); ++i) {
          REQUIRE(std::fabs(double(back[i]) - double(data[i])) <= bound);
        }
      }
      {
        // Floor rounding is one-sided: error below one full step.
        const auto qt = quantize(data, {}, narrow_spec(bits, Rounding::Floor));
        const auto back = dequantize(qt);
        const double bound = qt.scales[0] * (1.0 + 1e-9) + eps32;
        for (std::size_t i = 0; i < data.size(); ++i) {
          REQUIRE(std::fabs(double(back[i]) - double(data[i])) <= bound);
        }
      }
    }
  }
}

TEST_CASE("fake quantization is idempotent where the design guarantees it") {
  // Guaranteed cases: symmetric dynamic/static and affine static, nearest-even
  // rounding, bits <= 24 (float32 mantissa headroom). Affine dynamic is NOT a
  // projection (its range divisor shrinks the grid every pass) and floor
  // rounding drifts on exact grid points, so neither appears here.
  const double bit_grid[] = {1.0, 2.0, 3.0, 4.0, 4.25, 4.5, 4.75,
                             5.0, 5.5, 6.0, 8.0, 12.0, 16.0, 24.0};
  std::uint64_t seed = 31000;
  for (double bits : bit_grid) {
    CAPTURE(bits);
    auto data = gaussian_floats(128, seed++);

    const auto once = fake_quant(data, {}, narrow_spec(bits));
    const auto twice = fake_quant(once, {}, narrow_spec(bits));
    CHECK(bitwise_equal(once, twice));

    QuantSpec stat = narrow_spec(bits);
    stat.mode = Mode::Static;
    stat.static_params = StaticParams{0.037, 0.0};
    const auto s1 = fake_quant(data, {}, stat);
    const auto s2 = fake_quant(s1, {}, stat);
    CHECK(bitwise_equal(s1, s2));

    QuantSpec wstat = wide_spec(bits);
    wstat.mode = Mode::Static;
    wstat.static_params = StaticParams{0.021, -1.0};
    const auto w1 = fake_quant(data, {}, wstat);
    const auto w2 = fake_quant(w1, {}, wstat);
    CHECK(bitwise_equal(w1, w2));
  }
}

TEST_CASE("quantization error shrinks as bit-width grows") {
  const double grid[] = {4.0, 4.25, 4.5, 4.75, 5.0, 5.5, 6.0, 7.0, 8.0};
  for (std::uint64_t seed : {501u, 502u, 503u}) {
    auto data = gaussian_floats(512, seed);
    double prev_narrow = std::numeric_limits<double>::infinity();
    double prev_wide = std::numeric_limits<double>::infinity();
    for (double bits : grid) {
      CAPTURE(seed);
      CAPTURE(bits);
      const double e_narrow = mse(fake_quant(data, {}, narrow_spec(bits)), data);
      const double e_wide = mse(fake_quant(data, {}, wide_spec(bits)), data);
      CHECK(e_narrow <= prev_narrow);
      CHECK(e_wide <= prev_wide);
      prev_narrow = e_narrow;
      prev_wide = e_wide;
    }
  }
}

TEST_CASE("factorized matmul") {
  const std::size_t m = 5, k = 16, n = 7;
  auto a = gaussian_floats(m * k, 61);
  auto b = gaussian_floats(k * n, 62);
  const std::size_t sa[] = {m, k};
  const std::size_t sb[] = {k, n};
  const auto qa = quantize(a, sa, narrow_spec(8.0));
  const auto qb = quantize(b, sb, narrow_spec(8.0));

  SUBCASE("int64 accumulation equals double accumulation in matched order") {
    const auto out = factorized_matmul(qa, qb);
    const double s = qa.scales[0] * qb.scales[0];
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;  // exact: |codes| <= 127, k = 16, far below 2^53
        for (std::size_t t = 0; t < k; ++t) {
          acc += double(qa.codes[i * k + t]) * double(qb.codes[t * n + j]);
        }
        REQUIRE(out[i * n + j] == float(s * acc));
      }
    }
  }
  SUBCASE("agrees with float matmul of the dequantized factors") {
    const auto out = factorized_matmul(qa, qb);
    const auto da = dequantize(qa);
    const auto db = dequantize(qb);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t t = 0; t < k; ++t) {
          acc += double(da[i * k + t]) * double(db[t * n + j]);
        }
        REQUIRE(double(out[i * n + j]) ==
                doctest::Approx(acc).epsilon(1e-5));
      }
    }
  }
  SUBCASE("rejects affine codes, per-channel scales, and bad shapes") {
    const auto qw = quantize(a, sa, wide_spec(8.0));
    CHECK_THROWS_AS(factorized_matmul(qw, qb), std::invalid_argument);
    CHECK_THROWS_AS(factorized_matmul(qa, qa), std::invalid_argument);
    QuantSpec pc = narrow_spec(8.0);
    pc.granularity = Granularity::PerChannel;
    const auto qpc = quantize(a, sa, pc);
    CHECK_THROWS_AS(factorized_matmul(qpc, qb), std::invalid_argument);
  }
  SUBCASE("accumulator headroom is validated against k * qx_max * qw_max") {
    // 28-bit codes: (2^27-1)^2 * k already exceeds 2^53 for k = 1.
    auto tiny = gaussian_floats(1, 63);
    const std::size_t s1[] = {1, 1};
    const auto qx = quantize(tiny, s1, narrow_spec(28.0));
    CHECK_THROWS_AS(factorized_matmul(qx, qx), std::overflow_error);
    // 16-bit codes with small k stay within the bound.
    const auto q16a = quantize(a, sa, narrow_spec(16.0));
    const auto q16b = quantize(b, sb, narrow_spec(16.0));
    CHECK_NOTHROW(factorized_matmul(q16a, q16b));
  }
}

TEST_CASE("calibration statistics match hand-computed values") {
  const std::vector<float> s1 = {0.0f, 0.0f};
  const std::vector<float> s2 = {2.0f, 2.0f};
  const std::span<const float> samples[] = {std::span<const float>(s1),
                                            std::span<const float>(s2)};
  const auto st = calibrate(samples, 3.0);
  // Pooled {0,0,2,2}: mean 1, population variance 1.
  CHECK(st.count == 4);
  CHECK(st.mean == 1.0);
  CHECK(st.std_dev == 1.0);
  CHECK(st.inlier_lo == -2.0);
  CHECK(st.inlier_hi == 4.0);
  CHECK(st.outlier_fraction == 0.0);
  CHECK_FALSE(st.degenerate);
}

TEST_CASE("three-sigma outlier fraction on gaussian data is near theory") {
  const auto data = gaussian_floats(100000, 1234);
  const auto st = calibrate(std::span<const float>(data), 3.0);
  // P(|z| > 3) = 0.0027 for a standard normal.
  CHECK(st.outlier_fraction == doctest::Approx(0.0027).epsilon(0.75));
  CHECK(std::fabs(st.outlier_fraction - 0.0027) < 0.002);
  CHECK(st.mean == doctest::Approx(0.0).scale(1.0).epsilon(0.02));
  CHECK(st.std_dev == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("calibration edge cases") {
  const std::vector<float> constant(10, 3.5f);
  const auto st = calibrate(std::span<const float>(constant), 3.0);
  CHECK(st.degenerate);
  CHECK(st.std_dev == 0.0);
  CHECK(st.mean == 3.5);
  CHECK(st.outlier_fraction == 0.0);

  CHECK_THROWS_AS(calibrate(std::span<const float>(), 3.0), std::invalid_argument);
  CHECK_THROWS_AS(calibrate(std::span<const float>(constant), 0.0),
                  std::invalid_argument);
}

TEST_CASE("frozen parameters derive from the inlier band") {
  CalibrationStats st;
  st.mean = 1.0;
  st.std_dev = 1.0;
  st.inlier_lo = -2.0;
  st.inlier_hi = 4.0;

  const auto wide = static_params_for(st, wide_spec(8.0));
  CHECK(wide.offset == -2.0);
  CHECK(wide.scale == 6.0 / 256.0);

  const auto narrow = static_params_for(st, narrow_spec(8.0));
  CHECK(narrow.offset == 0.0);
  CHECK(narrow.scale == 4.0 / 127.0);

  CalibrationStats flat;
  flat.mean = 5.0;
  flat.degenerate = true;
  const auto frozen = static_params_for(flat, wide_spec(8.0));
  CHECK(frozen.scale == 1.0);
  CHECK(frozen.offset == 5.0);

  // Round-trip: a constant tensor survives the degenerate frozen quantizer.
  QuantSpec spec = wide_spec(8.0);
  spec.mode = Mode::Static;
  spec.static_params = frozen;
  const std::vector<float> w(4, 5.0f);
  CHECK(bitwise_equal(fake_quant(w, {}, spec), w));
}

TEST_CASE("spec and data validation errors") {
  CHECK_THROWS_AS(quantize({}, {}, narrow_spec(8.0)), std::invalid_argument);

  const std::vector<float> v = {1.0f, 2.0f};
  const std::size_t bad_shape[] = {3, 3};
  CHECK_THROWS_AS(quantize(v, bad_shape, narrow_spec(8.0)), std::invalid_argument);

  QuantSpec s = narrow_spec(8.0);
  s.mode = Mode::Static;  // no params provided
  CHECK_THROWS_AS(quantize(v, {}, s), std::invalid_argument);
  s.static_params = StaticParams{0.0, 0.0};
  CHECK_THROWS_AS(validate(s), std::invalid_argument);
  s.static_params = StaticParams{-1.0, 0.0};
  CHECK_THROWS_AS(validate(s), std::invalid_argument);

  QuantSpec pc = narrow_spec(8.0);
  pc.granularity = Granularity::PerChannel;
  pc.channel_axis = 2;
  CHECK_THROWS_AS(validate(pc), std::invalid_argument);
  pc.channel_axis = 0;
  CHECK_THROWS_AS(quantize(v, {}, pc), std::invalid_argument);  // needs a shape
  const std::size_t shape3[] = {1, 2, 1};
  const std::vector<float> v3 = {1.0f, 2.0f};
  CHECK_THROWS_AS(quantize(v3, shape3, pc), std::invalid_argument);  // 2-D only
}

TEST_CASE("affine in-range mask blocks only the saturated top of the range") {
  auto data = uniform_floats(64, 8080, -2.0, 3.0);
  const auto fq = fake_quant_ste(data, {}, wide_spec(8.0));
  const auto qt = quantize(data, {}, wide_spec(8.0));
  const auto mx = std::size_t(std::max_element(data.begin(), data.end()) -
                              data.begin());
  const auto mn = std::size_t(std::min_element(data.begin(), data.end()) -
                              data.begin());
  // The top edge maps to code L and clamps; the bottom edge fits exactly.
  CHECK(fq.in_range[mx] == 0);
  CHECK(fq.in_range[mn] == 1);
  // Blocked elements are exactly those whose half-step rounds past the top
  // level, i.e. those that saturated at code L-1 from above.
  const std::int64_t top = wide_levels(8.0) - 1;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!fq.in_range[i]) CHECK(qt.codes[i] == top);
  }
}
