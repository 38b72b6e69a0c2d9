// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "qtk/error.hpp"
#include "qtk/pipeline.hpp"

namespace qtk {
namespace {

const BlockDims kDims;

struct Suite {
  ToyBlock block = make_synthetic_block(kDims, 1);
  Matrix x_calib = make_synthetic_inputs(48, kDims.hidden, 1001);
  Matrix x_eval = make_synthetic_inputs(48, kDims.hidden, 2001);
};

const Suite& suite() {
  static const Suite s;
  return s;
}

QuantRecipe lossless() {
  QuantRecipe r = QuantRecipe::qoq(32);
  r.weight_bits = 16;
  r.act_bits = 16;
  r.kv_bits = 16;
  r.clip_grid.clear();
  return r;
}

TEST(Pipeline, DimsValidation) {
  EXPECT_NO_THROW(kDims.validate());
  EXPECT_THROW((BlockDims{3, 2, 16, 64, 256}).validate(), Error);
  EXPECT_THROW((BlockDims{4, 2, 15, 64, 256}).validate(), Error);
  EXPECT_EQ(kDims.qkv_width(), 128u);
}

TEST(Pipeline, ForwardShapesAndTrace) {
  const auto& s = suite();
  BlockTrace trace;
  const Matrix y = forward(s.block, s.x_calib, &trace);
  EXPECT_EQ(y.rows(), 48u);
  EXPECT_EQ(y.cols(), kDims.hidden);
  EXPECT_TRUE(all_finite(y));
  EXPECT_EQ(trace.inputs[0].cols(), kDims.hidden);
  EXPECT_EQ(trace.outputs[0].cols(), kDims.qkv_width());
  EXPECT_EQ(trace.inputs[3].cols(), kDims.ffn);
  EXPECT_EQ(trace.keys.cols(), kDims.kv_width());
  EXPECT_THROW(forward(s.block, Matrix(4, 32)), Error);
}

TEST(Pipeline, AttentionIsCausal) {
  const auto& s = suite();
  Matrix x2 = s.x_calib;
  for (std::size_t c = 0; c < kDims.hidden; ++c) x2(47, c) += 5.0;  // perturb the last token
  const Matrix a = forward(s.block, s.x_calib), b = forward(s.block, x2);
  for (std::size_t t = 0; t < 47; ++t)
    for (std::size_t c = 0; c < kDims.hidden; ++c) ASSERT_EQ(a(t, c), b(t, c));
}

TEST(Pipeline, RmsNormAndSwiglu) {
  const Matrix x(1, 2, {3, 4});
  const Matrix n = rms_norm(x, std::vector<double>{1, 2});
  const double rms = std::sqrt(12.5 + kRmsNormEps);
  EXPECT_DOUBLE_EQ(n(0, 0), 3 / rms);
  EXPECT_DOUBLE_EQ(n(0, 1), 8 / rms);
  const Matrix g = swiglu(Matrix(1, 2, {1.0, 2.0}));
  EXPECT_DOUBLE_EQ(g(0, 0), 2.0 / (1 + std::exp(-1.0)));
}

TEST(Pipeline, CalibrateMatchesTrace) {
  const auto& s = suite();
  BlockTrace trace;
  forward(s.block, s.x_calib, &trace);
  const BlockStats st = calibrate(s.block, s.x_calib);
  for (std::size_t l = 0; l < kLayerCount; ++l)
    EXPECT_EQ(st.layers[l].max_abs, CalibStats::from_activations(trace.inputs[l]).max_abs);
  EXPECT_THROW(calibrate(s.block, Matrix(2, 3)), Error);
}

TEST(Pipeline, IdentityRecipeReproducesBlock) {
  const auto& s = suite();
  const QuantizedBlock qb = apply_qoq(s.block, QuantRecipe::identity(), s.x_calib);
  EXPECT_LE(relative_frobenius_error(qb.forward(s.x_eval), forward(s.block, s.x_eval)), 1e-9);
}

// Every transformation is exact in real arithmetic; with quantization
// switched off the block must be reproduced to rounding error.
TEST(Pipeline, TransformationsAreLossless) {
  const auto& s = suite();
  const Matrix ref = forward(s.block, s.x_eval);
  QuantRecipe r = lossless();
  EXPECT_LE(relative_frobenius_error(apply_qoq(s.block, r, s.x_calib).forward(s.x_eval), ref), 1e-9);
  r.rotate = false;
  EXPECT_LE(relative_frobenius_error(apply_qoq(s.block, r, s.x_calib).forward(s.x_eval), ref), 1e-9);
  r = lossless();
  r.reorder = false;
  r.smooth_attention_alpha.reset();
  EXPECT_LE(relative_frobenius_error(apply_qoq(s.block, r, s.x_calib).forward(s.x_eval), ref), 1e-9);
}

TEST(Pipeline, LayerTracesMapBackToOriginalBasis) {
  const auto& s = suite();
  const QuantizedBlock qb = apply_qoq(s.block, lossless(), s.x_calib);
  BlockTrace a, b;
  forward(s.block, s.x_eval, &a);
  qb.forward(s.x_eval, &b);
  for (std::size_t l = 0; l < kLayerCount; ++l)
    EXPECT_LE(relative_frobenius_error(b.outputs[l], a.outputs[l]), 1e-9) << kLayerNames[l];
}

TEST(Pipeline, QoqBeatsRtn) {
  const auto& s = suite();
  const double rtn =
      evaluate_fidelity(s.block, apply_qoq(s.block, QuantRecipe::rtn(), s.x_calib), s.x_eval).mse;
  const double qoq =
      evaluate_fidelity(s.block, apply_qoq(s.block, QuantRecipe::qoq(32), s.x_calib), s.x_eval).mse;
  EXPECT_LT(qoq, rtn);
}

TEST(Pipeline, FidelityReport) {
  const auto& s = suite();
  const QuantizedBlock qb = apply_qoq(s.block, QuantRecipe::qoq(32), s.x_calib);
  const FidelityReport r = evaluate_fidelity(s.block, qb, s.x_eval);
  const Matrix ref = forward(s.block, s.x_eval), got = qb.forward(s.x_eval);
  EXPECT_EQ(r.tokens, 48u);
  ASSERT_EQ(r.layers.size(), kLayerCount);
  EXPECT_EQ(r.layers[2].name, "ffn1");
  EXPECT_DOUBLE_EQ(r.mse, mean_squared_error(got, ref));
  EXPECT_DOUBLE_EQ(r.max_error, max_abs_error(got, ref));
  EXPECT_DOUBLE_EQ(r.relative_error, relative_frobenius_error(got, ref));
  EXPECT_GT(r.mse, 0.0);
}

TEST(Pipeline, QuantizedLayersUseTheRequestedFormats) {
  const auto& s = suite();
  const QuantizedBlock g = apply_qoq(s.block, QuantRecipe::qoq(32), s.x_calib);
  for (const QuantLinear& l : g.layers) {
    EXPECT_EQ(l.mode, WeightMode::kPerGroup);
    EXPECT_EQ(l.pw.group_size, 32u);
    EXPECT_EQ(l.act_bits, 8);
    EXPECT_GT(l.clip_ratio, 0.0);
    EXPECT_LE(l.clip_ratio, 1.0);
    EXPECT_TRUE(l.perm.perm.empty() || l.perm.is_bijection());
  }
  const QuantizedBlock r = apply_qoq(s.block, QuantRecipe::rtn(), s.x_calib);
  EXPECT_TRUE(r.rotation.empty());
  for (const QuantLinear& l : r.layers) EXPECT_EQ(l.mode, WeightMode::kPerChannel);
}

TEST(Pipeline, RecipeRoundTripsAndValidates) {
  QuantRecipe r = QuantRecipe::qoq(32);
  r.output_smooth_alpha.reset();
  r.clip_grid = {0.75, 1.0};
  const QuantRecipe back = QuantRecipe::parse(r.describe());
  EXPECT_EQ(back.describe(), r.describe());
  EXPECT_FALSE(back.output_smooth_alpha.has_value());
  EXPECT_EQ(back.clip_grid, r.clip_grid);
  EXPECT_EQ(QuantRecipe::parse(QuantRecipe::rtn().describe()).describe(), QuantRecipe::rtn().describe());
  EXPECT_THROW(QuantRecipe::parse("bogus 1\n"), Error);

  QuantRecipe bad = QuantRecipe::qoq(48);
  EXPECT_THROW(bad.validate(kDims), Error);
  bad = QuantRecipe::qoq(32);
  bad.kv_bits = 3;
  EXPECT_THROW(bad.validate(kDims), Error);
  EXPECT_THROW(apply_qoq(suite().block, bad, suite().x_calib), Error);
}

TEST(Pipeline, SyntheticFixturesAreDeterministic) {
  const ToyBlock a = make_synthetic_block(kDims, 9), b = make_synthetic_block(kDims, 9);
  EXPECT_EQ(a.w_qkv, b.w_qkv);
  EXPECT_EQ(a.norm_attn, b.norm_attn);
  EXPECT_NE(a.w_qkv, make_synthetic_block(kDims, 10).w_qkv);
  EXPECT_EQ(make_synthetic_inputs(4, 8, 3), make_synthetic_inputs(4, 8, 3));
}

}  // namespace
}  // namespace qtk
