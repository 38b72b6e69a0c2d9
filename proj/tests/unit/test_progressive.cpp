// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "qtk/error.hpp"
#include "qtk/half.hpp"
#include "qtk/progressive.hpp"

namespace qtk {
namespace {

Matrix heavy_weights(std::uint64_t seed, std::size_t n, std::size_t k) {
  std::mt19937_64 rng(seed);
  std::student_t_distribution<double> t(3.0);
  Matrix w(n, k);
  for (double& v : w.data()) v = t(rng);
  return w;
}

// Brute force: reconstruct every (group min, group max, reachable code).
std::uint64_t brute_violations(std::int32_t range) {
  std::uint64_t bad = 0;
  for (std::int32_t lo = -range; lo <= range; ++lo)
    for (std::int32_t hi = lo; hi <= range; ++hi) {
      const std::int32_t s = level2_scale(lo, hi), z = level2_zero(lo, s);
      const std::int32_t a = level2_code(std::min(lo, 0), s, z), b = level2_code(std::max(hi, 0), s, z);
      for (std::int32_t q = a; q <= b; ++q) {
        const std::int32_t v = (q - z) * s;
        if (v < -128 || v > 127) ++bad;
      }
    }
  return bad;
}

TEST(Progressive, Level2Rules) {
  EXPECT_EQ(level2_scale(0, 0), 1);
  EXPECT_EQ(level2_scale(-15, 0), 1);
  EXPECT_EQ(level2_scale(-16, 0), 2);
  EXPECT_EQ(level2_scale(-119, 119), 16);
  EXPECT_EQ(level2_scale(5, 30), 2);  // range always contains zero
  EXPECT_EQ(level2_zero(-30, 2), 15);
  EXPECT_EQ(level2_code(127, 16, 7), 15);
  EXPECT_EQ(level2_code(-1000, 16, 7), 0);
}

TEST(Progressive, ProtectiveSweepAgainstBruteForce) {
  const ProtectiveSweep safe = sweep_protective_range(119);
  EXPECT_EQ(safe.cases, 239ull * 239 * 16);
  EXPECT_EQ(safe.violations, 0u);
  EXPECT_EQ(brute_violations(119), 0u);
  EXPECT_EQ(safe.max_scale, 16);

  const ProtectiveSweep wide = sweep_protective_range(127);
  EXPECT_GT(wide.violations, 0u);
  ASSERT_TRUE(wide.first_violation.has_value());
  const auto [lo, hi, code] = *wide.first_violation;
  const std::int32_t s = level2_scale(lo, hi);
  const std::int32_t v = (code - level2_zero(lo, s)) * s;
  EXPECT_TRUE(v < -128 || v > 127);
}

TEST(Progressive, ProtectiveRangeIsTight) {
  EXPECT_EQ(protective_range(8, 4), std::make_pair(-119, 119));
  EXPECT_EQ(sweep_protective_range(120).violations > 0, brute_violations(120) > 0);
  EXPECT_THROW(protective_range(8, 3), Error);
}

TEST(Progressive, InvariantsHold) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const std::size_t g = seed % 2 ? 32 : 64;
    const ProgressiveWeight pw = quantize_progressive(heavy_weights(seed, 16, 128), g);
    EXPECT_EQ(pw.groups_per_row(), 128 / g);
    for (auto c : pw.codes.data()) ASSERT_TRUE(c >= 0 && c <= 15);
    for (auto z : pw.zeros.data()) ASSERT_TRUE(z >= 0 && z <= 15);
    for (auto s : pw.scales_l2.data()) ASSERT_TRUE(s >= 1 && s <= 255);
    for (double s : pw.scales_l1) ASSERT_EQ(round_to_f16(s), s);
    EXPECT_NO_THROW(dequantize_level1(pw));  // stays inside int8
  }
}

TEST(Progressive, ReconstructionTracksWeights) {
  const Matrix w = heavy_weights(11, 8, 256);
  const Matrix g32 = dequantize_full(quantize_progressive(w, 32));
  const Matrix g256 = dequantize_full(quantize_progressive(w, 256));
  EXPECT_LT(relative_frobenius_error(g32, w), 0.15);
  EXPECT_LT(relative_frobenius_error(g32, w), relative_frobenius_error(g256, w));
}

TEST(Progressive, RejectsBadShapes) {
  EXPECT_THROW(quantize_progressive(Matrix(4, 48), 32), Error);
  EXPECT_THROW(quantize_progressive(Matrix(4, 64), 0), Error);
}

TEST(Progressive, ZeroRowsAreExact) {
  const ProgressiveWeight pw = quantize_progressive(Matrix(2, 64), 32);
  EXPECT_EQ(dequantize_full(pw), Matrix(2, 64));
}

TEST(Progressive, LegacyTwoLevelIsNotInt8Friendly) {
  const Matrix w = heavy_weights(2, 8, 128);
  const LegacyTwoLevelWeight lw = quantize_legacy_two_level(w, 32);
  EXPECT_LT(relative_frobenius_error(dequantize_legacy(lw), w), 0.3);
  const CodeMatrix partial = legacy_group_only_reconstruction(lw);
  const auto [mn, mx] = std::minmax_element(partial.data().begin(), partial.data().end());
  EXPECT_TRUE(*mn < -128 || *mx > 127);
}

}  // namespace
}  // namespace qtk
