// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qtk/progressive.hpp"

#include <algorithm>
#include <cmath>

#include "qtk/half.hpp"
#include "qtk/quant_core.hpp"

namespace qtk {
namespace {

constexpr std::int32_t kU4Max = 15;
constexpr std::int32_t kLevel1Range = 119;
constexpr std::int32_t kLegacyCodeMax = 7;
constexpr std::int32_t kU8Max = 255;

std::int32_t round_div(double num, double den) {
  return static_cast<std::int32_t>(round_half_away(num / den));
}

}  // namespace

std::int32_t level2_scale(std::int32_t group_min, std::int32_t group_max) {
  const std::int32_t span = std::max(group_max, 0) - std::min(group_min, 0);
  return std::max(1, (span + kU4Max - 1) / kU4Max);
}

std::int32_t level2_zero(std::int32_t group_min, std::int32_t scale) {
  return std::clamp(round_div(-std::min(group_min, 0), scale), 0, kU4Max);
}

std::int32_t level2_code(std::int32_t q, std::int32_t scale, std::int32_t zero) {
  const double code = round_half_away(static_cast<double>(q) / scale + zero);
  return static_cast<std::int32_t>(std::clamp(code, 0.0, static_cast<double>(kU4Max)));
}

ProtectiveSweep sweep_protective_range(std::int32_t range) {
  ProtectiveSweep out;
  out.range = range;
  for (std::int32_t a = -range; a <= range; ++a) {
    for (std::int32_t b = -range; b <= range; ++b) {
      const std::int32_t lo = std::min(a, b);
      const std::int32_t hi = std::max(a, b);
      const std::int32_t s = level2_scale(lo, hi);
      const std::int32_t z = level2_zero(lo, s);
      out.max_scale = std::max(out.max_scale, s);
      // The quantizer is monotone, so the group's values reach exactly the
      // codes between code(lo) and code(hi).
      const std::int32_t c_lo = level2_code(lo, s, z);
      const std::int32_t c_hi = level2_code(hi, s, z);
      for (std::int32_t code = 0; code <= kU4Max; ++code) {
        ++out.cases;
        if (code < c_lo || code > c_hi) continue;
        ++out.checked;
        const std::int32_t rec = (code - z) * s;
        if (rec < -128 || rec > 127) {
          if (out.violations == 0) out.first_violation = std::array{lo, hi, code};
          ++out.violations;
        }
      }
    }
  }
  return out;
}

std::pair<std::int32_t, std::int32_t> protective_range(int bits_l1, int bits_l2) {
  require(bits_l1 == 8 && bits_l2 == 4, ErrorKind::kUnsupported,
          "protective_range: only (8, 4) is supported");
  static const std::int32_t range = [] {
    for (std::int32_t r = 127; r > 0; --r)
      if (sweep_protective_range(r).violations == 0) return r;
    return 0;
  }();
  return {-range, range};
}

ProgressiveWeight quantize_progressive(const Matrix& w, std::size_t group_size,
                                       double clip_ratio) {
  require(group_size >= 1 && w.cols() % group_size == 0, ErrorKind::kShapeError,
          "quantize_progressive: group size must divide k");
  require(all_finite(w), ErrorKind::kInvalidInput, "quantize_progressive: non-finite weight");
  require(clip_ratio > 0.0 && clip_ratio <= 1.0, ErrorKind::kInvalidInput,
          "quantize_progressive: clip ratio must lie in (0, 1]");

  ProgressiveWeight pw;
  pw.n = w.rows();
  pw.k = w.cols();
  pw.group_size = group_size;
  pw.codes = CodeMatrix(pw.n, pw.k);
  pw.zeros = CodeMatrix(pw.n, pw.groups_per_row());
  pw.scales_l2 = CodeMatrix(pw.n, pw.groups_per_row());
  pw.scales_l1.assign(pw.n, 1.0);

  std::vector<std::int32_t> level1(pw.k);
  for (std::size_t r = 0; r < pw.n; ++r) {
    double amax = 0.0;
    for (double v : w.row(r)) amax = std::max(amax, std::abs(v));
    double s0 = round_to_f16(clip_ratio * amax / kLevel1Range);
    if (s0 == 0.0) s0 = 1.0;
    pw.scales_l1[r] = s0;
    for (std::size_t c = 0; c < pw.k; ++c) {
      const double q = round_half_away(w(r, c) / s0);
      level1[c] = static_cast<std::int32_t>(
          std::clamp(q, static_cast<double>(-kLevel1Range), static_cast<double>(kLevel1Range)));
    }
    for (std::size_t gi = 0; gi < pw.groups_per_row(); ++gi) {
      const auto first = level1.begin() + static_cast<std::ptrdiff_t>(gi * group_size);
      const auto [mn, mx] = std::minmax_element(first, first + static_cast<std::ptrdiff_t>(group_size));
      const std::int32_t s1 = level2_scale(*mn, *mx);
      const std::int32_t z = level2_zero(*mn, s1);
      pw.scales_l2(r, gi) = s1;
      pw.zeros(r, gi) = z;
      for (std::size_t c = gi * group_size; c < (gi + 1) * group_size; ++c)
        pw.codes(r, c) = level2_code(level1[c], s1, z);
    }
  }
  return pw;
}

Int8Matrix dequantize_level1(const ProgressiveWeight& pw) {
  Int8Matrix out(pw.n, pw.k);
  for (std::size_t r = 0; r < pw.n; ++r)
    for (std::size_t c = 0; c < pw.k; ++c) {
      const std::int32_t v = (pw.codes(r, c) - pw.zero_at(r, c)) * pw.scale_l2_at(r, c);
      if (v < -128 || v > 127) {
        fail(ErrorKind::kOverflowViolation, "level-1 value " + std::to_string(v) + " at (" +
                                                std::to_string(r) + ", " + std::to_string(c) +
                                                ") escapes int8");
      }
      out(r, c) = static_cast<std::int8_t>(v);
    }
  return out;
}

Matrix dequantize_full(const ProgressiveWeight& pw) {
  const Int8Matrix l1 = dequantize_level1(pw);
  Matrix out(pw.n, pw.k);
  for (std::size_t r = 0; r < pw.n; ++r)
    for (std::size_t c = 0; c < pw.k; ++c) out(r, c) = l1(r, c) * pw.scales_l1[r];
  return out;
}

LegacyTwoLevelWeight quantize_legacy_two_level(const Matrix& w, std::size_t group_size) {
  require(group_size >= 1 && w.cols() % group_size == 0, ErrorKind::kShapeError,
          "quantize_legacy_two_level: group size must divide k");
  LegacyTwoLevelWeight lw;
  lw.n = w.rows();
  lw.k = w.cols();
  lw.group_size = group_size;
  const std::size_t groups = lw.k / group_size;
  lw.codes = CodeMatrix(lw.n, lw.k);
  lw.scales_group_u8 = CodeMatrix(lw.n, groups);
  lw.scales_channel.assign(lw.n, 1.0);

  std::vector<double> group_scale(groups);
  for (std::size_t r = 0; r < lw.n; ++r) {
    for (std::size_t gi = 0; gi < groups; ++gi) {
      double amax = 0.0;
      for (std::size_t c = gi * group_size; c < (gi + 1) * group_size; ++c)
        amax = std::max(amax, std::abs(w(r, c)));
      group_scale[gi] = amax / kLegacyCodeMax;
    }
    double s0 = round_to_f16(*std::max_element(group_scale.begin(), group_scale.end()) / kU8Max);
    if (s0 == 0.0) s0 = 1.0;
    lw.scales_channel[r] = s0;
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::int32_t s1 = std::clamp(round_div(group_scale[gi], s0), 1, kU8Max);
      lw.scales_group_u8(r, gi) = s1;
      const double eff = s1 * s0;
      for (std::size_t c = gi * group_size; c < (gi + 1) * group_size; ++c) {
        const double q = round_half_away(w(r, c) / eff);
        lw.codes(r, c) = static_cast<std::int32_t>(std::clamp(
            q, static_cast<double>(-kLegacyCodeMax), static_cast<double>(kLegacyCodeMax)));
      }
    }
  }
  return lw;
}

Matrix dequantize_legacy(const LegacyTwoLevelWeight& lw) {
  Matrix out(lw.n, lw.k);
  for (std::size_t r = 0; r < lw.n; ++r)
    for (std::size_t c = 0; c < lw.k; ++c)
      out(r, c) = lw.codes(r, c) * (lw.scales_group_u8(r, c / lw.group_size) * lw.scales_channel[r]);
  return out;
}

CodeMatrix legacy_group_only_reconstruction(const LegacyTwoLevelWeight& lw) {
  CodeMatrix out(lw.n, lw.k);
  for (std::size_t r = 0; r < lw.n; ++r)
    for (std::size_t c = 0; c < lw.k; ++c)
      out(r, c) = lw.codes(r, c) * lw.scales_group_u8(r, c / lw.group_size);
  return out;
}

}  // namespace qtk
