// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

// A single pre-norm transformer block (RMSNorm -> GQA attention with rotary
// embeddings -> W_o, RMSNorm -> SwiGLU FFN), and the W4A8KV4 recipe that
// turns it into an integer-executed block.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qtk/calib.hpp"
#include "qtk/int_exec.hpp"
#include "qtk/matrix.hpp"
#include "qtk/progressive.hpp"
#include "qtk/quant_core.hpp"

namespace qtk {

struct BlockDims {
  std::size_t heads = 4;
  std::size_t kv_heads = 2;
  std::size_t head_dim = 16;
  std::size_t hidden = 64;
  std::size_t ffn = 256;

  std::size_t gqa_ratio() const { return heads / kv_heads; }
  std::size_t q_width() const { return heads * head_dim; }
  std::size_t kv_width() const { return kv_heads * head_dim; }
  std::size_t qkv_width() const { return q_width() + 2 * kv_width(); }
  /// Throws ShapeError unless heads = r * kv_heads and head_dim is even.
  void validate() const;

  friend bool operator==(const BlockDims&, const BlockDims&) = default;
};

inline constexpr double kRmsNormEps = 1e-6;

/// Weights are stored out x in; every linear computes X W^T.
struct ToyBlock {
  BlockDims dims;
  std::vector<double> norm_attn;  // hidden
  std::vector<double> norm_ffn;   // hidden
  Matrix w_qkv;   // (heads + 2 kv_heads) * D x hidden, rows [Q; K; V]
  Matrix w_o;     // hidden x heads * D
  Matrix w_ffn1;  // 2 ffn x hidden, rows [gate; up]
  Matrix w_ffn2;  // hidden x ffn

  void validate() const;
};

inline constexpr const char* kLayerNames[] = {"qkv", "o", "ffn1", "ffn2"};
inline constexpr std::size_t kLayerCount = 4;

/// Inputs and outputs of every linear layer plus pre-rotary keys.
struct BlockTrace {
  Matrix inputs[kLayerCount];
  Matrix outputs[kLayerCount];
  Matrix keys;  // tokens x kv_heads * D, before rotary embedding
};

/// Causal attention of a packed qkv activation (tokens x qkv_width), rotary
/// embedding applied at positions 0..tokens-1. Returns tokens x heads * D.
Matrix causal_attention(const Matrix& qkv, const BlockDims& dims);

Matrix rms_norm(const Matrix& x, std::span<const double> gamma);
/// silu(gate) * up for a tokens x 2 ffn activation laid out [gate | up].
Matrix swiglu(const Matrix& gate_up);

/// x is tokens x hidden, processed as one causal sequence.
Matrix forward(const ToyBlock& block, const Matrix& x, BlockTrace* trace = nullptr);

struct BlockStats {
  CalibStats layers[kLayerCount];
};

/// Per-channel max |X| at each linear input. Throws ShapeError.
BlockStats calibrate(const ToyBlock& block, const Matrix& x_calib);

enum class WeightMode { kPerChannel, kPerGroup };

struct QuantRecipe {
  bool rotate = true;
  std::optional<double> smooth_attention_alpha = kDefaultSmoothAttentionAlpha;
  std::optional<double> output_smooth_alpha = kDefaultOutputSmoothAlpha;
  bool reorder = true;
  std::vector<double> clip_grid = default_clip_grid();  // empty disables clipping
  WeightMode weight_mode = WeightMode::kPerGroup;
  std::size_t group_size = 64;
  int weight_bits = 4;  // 4 or 16
  int act_bits = 8;     // 8 or 16
  int kv_bits = 4;      // 4, 8 or 16

  /// Every stage on, progressive per-group weights.
  static QuantRecipe qoq(std::size_t group_size = 64);
  /// Plain round-to-nearest W4A8KV4 with per-channel weights.
  static QuantRecipe rtn();
  /// No transformation, no quantization.
  static QuantRecipe identity();

  void validate(const BlockDims& dims) const;
  /// One `key value` pair per line; parse() reads it back.
  std::string describe() const;
  static QuantRecipe parse(const std::string& text);
};

/// A linear layer after all transformations. Input columns are gathered by
/// `perm` before the activation is quantized.
struct QuantLinear {
  std::string name;
  ChannelPermutation perm;  // empty: no gather
  int act_bits = 16;
  int weight_bits = 16;
  WeightMode mode = WeightMode::kPerChannel;
  double clip_ratio = 1.0;
  Matrix w;              // float weights (16-bit mode)
  QuantizedTensor qw;    // per-channel u4
  ProgressiveWeight pw;  // per-group
  PackedWeights packed;
  /// Multiplies output column j back to the untransformed block's basis.
  std::vector<double> out_scale;
  bool out_rotated = false;  // output lives in the rotated residual basis

  std::size_t in_features() const;
  std::size_t out_features() const;
  Matrix apply(const Matrix& x) const;
  /// Effective float weights (dequantized, input order after the gather).
  Matrix effective_weight() const;
};

struct QuantizedBlock {
  BlockDims dims;
  QuantRecipe recipe;
  Matrix rotation;  // hidden x hidden, empty when not rotated
  std::vector<double> norm_attn;
  std::vector<double> norm_ffn;
  QuantLinear layers[kLayerCount];

  /// Output in the original (unrotated) basis. When tracing, layer outputs
  /// are mapped back to the original basis; inputs are left as consumed.
  Matrix forward(const Matrix& x, BlockTrace* trace = nullptr) const;
};

/// Stages run rotate -> output smoothing -> SmoothAttention -> reorder ->
/// clip -> weight quantization; statistics are re-collected on x_calib after
/// every transformation that changes them.
QuantizedBlock apply_qoq(const ToyBlock& block, const QuantRecipe& recipe, const Matrix& x_calib);

struct LayerFidelity {
  std::string name;
  double mse = 0.0;
  double max_error = 0.0;
};

struct FidelityReport {
  std::size_t tokens = 0;
  std::vector<LayerFidelity> layers;
  double mse = 0.0;
  double max_error = 0.0;
  double relative_error = 0.0;  // relative Frobenius error of the block output
};

FidelityReport evaluate_fidelity(const ToyBlock& block, const QuantizedBlock& qblock,
                                 const Matrix& x_eval);

// Synthetic heavy-tailed fixtures. Outliers are planted in the norm gains
// (activation outlier channels), in a few key channel pairs and in some
// value / up-projection rows; weights have Student-t tails.
ToyBlock make_synthetic_block(const BlockDims& dims, std::uint64_t seed);
Matrix make_synthetic_inputs(std::size_t tokens, std::size_t hidden, std::uint64_t seed);

}  // namespace qtk
