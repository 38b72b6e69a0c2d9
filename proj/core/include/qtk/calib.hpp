// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "qtk/matrix.hpp"

namespace qtk {

/// Per-channel key smoothing factors for one or more KV heads, laid out
/// head-major (lambda[h * head_dim + i]). Paired channels (i, i + D/2) share
/// a factor so the scaling commutes with rotary embeddings.
struct SmoothScales {
  std::size_t head_dim = 0;
  double alpha = 0.5;
  std::vector<double> lambda;

  std::size_t kv_heads() const { return head_dim == 0 ? 0 : lambda.size() / head_dim; }
  std::span<const double> head(std::size_t h) const {
    return {lambda.data() + h * head_dim, head_dim};
  }
};

/// perm[new_position] = original channel index.
struct ChannelPermutation {
  std::vector<std::size_t> perm;

  std::size_t size() const { return perm.size(); }
  bool is_bijection() const;
  ChannelPermutation inverse() const;
  static ChannelPermutation identity(std::size_t k);
};

/// Per-input-channel max |X| collected over calibration data.
struct CalibStats {
  std::vector<double> max_abs;

  static CalibStats from_activations(const Matrix& x);
  void accumulate(const Matrix& x);
};

inline constexpr double kDefaultSmoothAttentionAlpha = 0.5;
inline constexpr double kDefaultOutputSmoothAlpha = 0.1;
inline constexpr double kRopeBase = 10000.0;

/// lambda_i = lambda_{i+D/2} = max(max|K_i|, max|K_{i+D/2}|)^alpha for a
/// single head; k_samples is tokens x D. Dead channel pairs get 1.
SmoothScales smooth_attention_scales(const Matrix& k_samples, double alpha, std::size_t head_dim);
/// Same, for keys laid out tokens x (kv_heads * D).
SmoothScales smooth_attention_scales_multihead(const Matrix& k_samples, double alpha,
                                               std::size_t head_dim);

/// Rows of w_q (heads * D x hidden) scaled by lambda, rows of w_k
/// (kv_heads * D x hidden) divided by it. Query head h uses KV head h / ratio.
std::pair<Matrix, Matrix> fuse_smooth_into_projections(const Matrix& w_q, const Matrix& w_k,
                                                       const SmoothScales& s);

/// Rotary embedding with (i, i + D/2) pairing and theta_i = base^(-2i/D).
std::vector<double> rope(std::span<const double> x, std::size_t position,
                         double base = kRopeBase);

/// Sylvester Hadamard matrix scaled by 1/sqrt(n); n must be a power of two.
Matrix hadamard(std::size_t n);

/// Returns (X Q, W Q) for weights stored out x in, so (XQ)(WQ)^T = X W^T.
std::pair<Matrix, Matrix> rotate_block_input(const Matrix& x, const Matrix& w, const Matrix& q);

struct OutputSmoothing {
  std::vector<double> lambda;
  Matrix w_fused;  // columns multiplied by lambda
};

/// lambda_j = max|X_j|^alpha / max|W_{.j}|^(1-alpha). Activations are meant
/// to be divided by lambda; the returned weight absorbs the inverse.
OutputSmoothing smooth_output_module(const CalibStats& stats, const Matrix& w, double alpha);
/// X with each column divided by lambda.
Matrix divide_columns(const Matrix& x, std::span<const double> lambda);

/// Groups channels by descending salience (ties by index); each run of g
/// positions is one quantization group, kept in original index order.
ChannelPermutation reorder_channels(const CalibStats& stats, std::size_t group_size);

Matrix permute_columns(const Matrix& x, const ChannelPermutation& p);
/// Permutes columns of x and the input channels (columns) of w identically.
std::pair<Matrix, Matrix> apply_permutation(const Matrix& x, const Matrix& w,
                                            const ChannelPermutation& p);

/// (W, alpha) -> quantized-dequantized W with clipped dynamic range.
using ClipQuantizer = std::function<Matrix(const Matrix& w, double alpha)>;
/// (X, W) -> output whose error is minimized.
using ClipForward = std::function<Matrix(const Matrix& x, const Matrix& w)>;

enum class ClipObjective { kLayerOutput, kBlockOutput };

struct ClipResult {
  double alpha = 1.0;
  double objective = 0.0;
  std::vector<double> objectives;  // one per grid point
};

/// 20 evenly spaced ratios covering [0.5, 1.0].
std::vector<double> default_clip_grid();

/// Grid search minimizing ||f(X; W) - f(X; Q(W; alpha))||^2. Ties go to the
/// larger alpha.
ClipResult clip_search(const Matrix& w, const Matrix& x_calib, const ClipForward& forward,
                       const ClipQuantizer& quantizer, std::span<const double> grid);
/// LayerOutput uses X W^T; BlockOutput requires a block forward.
ClipResult clip_search(const Matrix& w, const Matrix& x_calib, ClipObjective objective,
                       const ClipQuantizer& quantizer, std::span<const double> grid,
                       const ClipForward& block_forward = {});

}  // namespace qtk
