// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "qtk/calib.hpp"
#include "qtk/error.hpp"
#include "qtk/quant_core.hpp"

namespace qtk {
namespace {

Matrix gaussian(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (double& v : m.data()) v = n(rng);
  return m;
}

TEST(Calib, StatsAccumulate) {
  CalibStats s = CalibStats::from_activations(Matrix(2, 3, {1, -5, 0, -2, 3, 0.5}));
  EXPECT_EQ(s.max_abs, (std::vector<double>{2, 5, 0.5}));
  s.accumulate(Matrix(1, 3, {-7, 1, 0}));
  EXPECT_EQ(s.max_abs, (std::vector<double>{7, 5, 0.5}));
  EXPECT_THROW(s.accumulate(Matrix(1, 2)), Error);
}

TEST(Calib, ReorderGroupsBySalience) {
  const CalibStats s{{1, 9, 2, 8}};
  const ChannelPermutation p = reorder_channels(s, 2);
  EXPECT_EQ(p.perm, (std::vector<std::size_t>{1, 3, 0, 2}));
  EXPECT_TRUE(p.is_bijection());
}

TEST(Calib, PermutationAlgebra) {
  const ChannelPermutation p{{2, 0, 3, 1}};
  const ChannelPermutation inv = p.inverse();
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(inv.perm[p.perm[i]], i);
  EXPECT_FALSE((ChannelPermutation{{0, 0, 1}}).is_bijection());
  EXPECT_EQ(ChannelPermutation::identity(3).perm, (std::vector<std::size_t>{0, 1, 2}));

  std::mt19937_64 rng(1);
  const Matrix x = gaussian(rng, 3, 4), w = gaussian(rng, 5, 4);
  const auto [xp, wp] = apply_permutation(x, w, p);
  EXPECT_LE(relative_frobenius_error(matmul_nt(xp, wp), matmul_nt(x, w)), 1e-14);
  EXPECT_EQ(permute_columns(xp, inv), x);
}

TEST(Calib, HadamardIsOrthogonal) {
  for (std::size_t n : {1u, 2u, 8u, 64u}) {
    const Matrix h = hadamard(n);
    EXPECT_LE(max_abs_error(matmul(h, transpose(h)), identity(n)), 1e-14);
  }
  EXPECT_THROW(hadamard(12), Error);
}

TEST(Calib, RotationPreservesProduct) {
  std::mt19937_64 rng(2);
  const Matrix x = gaussian(rng, 6, 16), w = gaussian(rng, 7, 16);
  const auto [xq, wq] = rotate_block_input(x, w, hadamard(16));
  EXPECT_LE(relative_frobenius_error(matmul_nt(xq, wq), matmul_nt(x, w)), 1e-13);
}

TEST(Calib, RotationSpreadsOutliers) {
  Matrix x(4, 64, 0.01);
  for (std::size_t r = 0; r < 4; ++r) x(r, 5) = 50.0;
  const Matrix xr = matmul(x, hadamard(64));
  EXPECT_LT(CalibStats::from_activations(xr).max_abs[0], 10.0);
}

TEST(Calib, SmoothAttentionScalesArePaired) {
  std::mt19937_64 rng(3);
  Matrix k = gaussian(rng, 20, 16);
  for (std::size_t t = 0; t < 20; ++t) k(t, 2) *= 10.0;
  const SmoothScales s = smooth_attention_scales(k, 0.5, 16);
  ASSERT_EQ(s.lambda.size(), 16u);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(s.lambda[i], s.lambda[i + 8]);
  const CalibStats st = CalibStats::from_activations(k);
  EXPECT_DOUBLE_EQ(s.lambda[2], std::sqrt(std::max(st.max_abs[2], st.max_abs[10])));
  EXPECT_THROW(smooth_attention_scales(k, 0.5, 15), Error);
}

TEST(Calib, DeadChannelPairsGetUnitScale) {
  Matrix k(4, 4);
  k(0, 1) = 4.0;
  const SmoothScales s = smooth_attention_scales(k, 0.5, 4);
  EXPECT_EQ(s.lambda[0], 1.0);
  EXPECT_EQ(s.lambda[2], 1.0);
  EXPECT_DOUBLE_EQ(s.lambda[1], 2.0);
}

TEST(Calib, FusedSmoothingPreservesScores) {
  std::mt19937_64 rng(4);
  const std::size_t d = 8, heads = 4, kv = 2, hidden = 16;
  const Matrix x = gaussian(rng, 10, hidden);
  const Matrix wq = gaussian(rng, heads * d, hidden), wk = gaussian(rng, kv * d, hidden);
  const SmoothScales s = smooth_attention_scales_multihead(matmul_nt(x, wk), 0.5, d);
  EXPECT_EQ(s.kv_heads(), kv);
  const auto [wq2, wk2] = fuse_smooth_into_projections(wq, wk, s);
  const Matrix q = matmul_nt(x, wq), k = matmul_nt(x, wk);
  const Matrix q2 = matmul_nt(x, wq2), k2 = matmul_nt(x, wk2);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < 10; ++i)
      for (std::size_t j = 0; j < 10; ++j) {
        double a = 0, b = 0;
        for (std::size_t c = 0; c < d; ++c) {
          a += q(i, h * d + c) * k(j, (h / 2) * d + c);
          b += q2(i, h * d + c) * k2(j, (h / 2) * d + c);
        }
        ASSERT_NEAR(a, b, 1e-12 * std::max(1.0, std::abs(a)));
      }
}

TEST(Calib, RopeIsARotation) {
  std::mt19937_64 rng(5);
  const Matrix x = gaussian(rng, 1, 16);
  const std::vector<double> v(x.data().begin(), x.data().end());
  EXPECT_EQ(rope(v, 0), v);
  double n0 = 0, n1 = 0;
  const auto r = rope(v, 37);
  for (std::size_t i = 0; i < 16; ++i) {
    n0 += v[i] * v[i];
    n1 += r[i] * r[i];
  }
  EXPECT_NEAR(n0, n1, 1e-12);
  // Pair i rotates by position * base^(-2i/D).
  const double th = 37 * std::pow(kRopeBase, -2.0 * 3 / 16);
  EXPECT_NEAR(r[3], v[3] * std::cos(th) - v[11] * std::sin(th), 1e-12);
  EXPECT_NEAR(r[11], v[11] * std::cos(th) + v[3] * std::sin(th), 1e-12);
}

TEST(Calib, OutputSmoothingFormula) {
  std::mt19937_64 rng(6);
  const Matrix x = gaussian(rng, 12, 8), w = gaussian(rng, 5, 8);
  const CalibStats st = CalibStats::from_activations(x);
  const OutputSmoothing os = smooth_output_module(st, w, 0.1);
  for (std::size_t j = 0; j < 8; ++j) {
    double wmax = 0;
    for (std::size_t r = 0; r < 5; ++r) wmax = std::max(wmax, std::abs(w(r, j)));
    EXPECT_NEAR(os.lambda[j], std::pow(st.max_abs[j], 0.1) / std::pow(wmax, 0.9), 1e-12);
  }
  const Matrix y = matmul_nt(divide_columns(x, os.lambda), os.w_fused);
  EXPECT_LE(relative_frobenius_error(y, matmul_nt(x, w)), 1e-13);
}

TEST(Calib, ClipSearchPrefersClippingWithOutliers) {
  std::mt19937_64 rng(7);
  Matrix w = gaussian(rng, 4, 64);
  w(0, 0) = 30.0;
  const Matrix x = gaussian(rng, 32, 64);
  const auto spec = QuantSpec::asymmetric_unsigned(4, Granularity::per_channel());
  const ClipQuantizer q = [&](const Matrix& m, double a) {
    return dequantize(quantize(m, spec, {ScaleStorage::kExact, a}));
  };
  const auto grid = default_clip_grid();
  ASSERT_EQ(grid.size(), 20u);
  EXPECT_DOUBLE_EQ(grid.front(), 0.5);
  EXPECT_DOUBLE_EQ(grid.back(), 1.0);
  const ClipResult r = clip_search(w, x, ClipObjective::kLayerOutput, q, grid);
  EXPECT_EQ(r.objectives.size(), grid.size());
  EXPECT_DOUBLE_EQ(r.objective, *std::min_element(r.objectives.begin(), r.objectives.end()));
  EXPECT_LE(r.objective, r.objectives.back());
  EXPECT_THROW(clip_search(w, x, ClipObjective::kBlockOutput, q, grid), Error);
}

TEST(Calib, ClipSearchTiesGoToLargerRatio) {
  const Matrix w(2, 2, 1.0), x(2, 2, 1.0);
  const ClipQuantizer q = [](const Matrix& m, double) { return m; };
  const std::vector<double> grid{0.6, 0.8, 1.0};
  EXPECT_EQ(clip_search(w, x, ClipObjective::kLayerOutput, q, grid).alpha, 1.0);
}

}  // namespace
}  // namespace qtk
