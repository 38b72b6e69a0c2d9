// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qtk/calib.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace qtk {
namespace {

double guard(double v) { return v == 0.0 ? 1.0 : v; }

}  // namespace

bool ChannelPermutation::is_bijection() const {
  std::vector<bool> seen(perm.size(), false);
  for (std::size_t p : perm) {
    if (p >= perm.size() || seen[p]) return false;
    seen[p] = true;
  }
  return true;
}

ChannelPermutation ChannelPermutation::inverse() const {
  ChannelPermutation inv;
  inv.perm.resize(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv.perm[perm[i]] = i;
  return inv;
}

ChannelPermutation ChannelPermutation::identity(std::size_t k) {
  ChannelPermutation p;
  p.perm.resize(k);
  std::iota(p.perm.begin(), p.perm.end(), std::size_t{0});
  return p;
}

CalibStats CalibStats::from_activations(const Matrix& x) {
  CalibStats s;
  s.accumulate(x);
  return s;
}

void CalibStats::accumulate(const Matrix& x) {
  if (max_abs.empty()) max_abs.assign(x.cols(), 0.0);
  require(max_abs.size() == x.cols(), ErrorKind::kShapeError,
          "CalibStats: channel count changed between batches");
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) max_abs[c] = std::max(max_abs[c], std::abs(x(r, c)));
}

SmoothScales smooth_attention_scales(const Matrix& k_samples, double alpha, std::size_t head_dim) {
  require(head_dim == k_samples.cols(), ErrorKind::kShapeError,
          "smooth_attention_scales: sample width must equal head dim");
  return smooth_attention_scales_multihead(k_samples, alpha, head_dim);
}

SmoothScales smooth_attention_scales_multihead(const Matrix& k_samples, double alpha,
                                               std::size_t head_dim) {
  require(head_dim > 0 && head_dim % 2 == 0, ErrorKind::kShapeError,
          "smooth_attention_scales: head dim must be even");
  require(k_samples.cols() % head_dim == 0, ErrorKind::kShapeError,
          "smooth_attention_scales: width is not a multiple of head dim");
  require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::kInvalidInput,
          "smooth_attention_scales: alpha must lie in [0, 1]");
  const CalibStats stats = CalibStats::from_activations(k_samples);
  SmoothScales s;
  s.head_dim = head_dim;
  s.alpha = alpha;
  s.lambda.assign(k_samples.cols(), 1.0);
  const std::size_t half = head_dim / 2;
  for (std::size_t base = 0; base < k_samples.cols(); base += head_dim) {
    for (std::size_t i = 0; i < half; ++i) {
      const double m = std::max(stats.max_abs[base + i], stats.max_abs[base + i + half]);
      const double l = m == 0.0 ? 1.0 : std::pow(m, alpha);
      s.lambda[base + i] = l;
      s.lambda[base + i + half] = l;
    }
  }
  return s;
}

std::pair<Matrix, Matrix> fuse_smooth_into_projections(const Matrix& w_q, const Matrix& w_k,
                                                       const SmoothScales& s) {
  const std::size_t d = s.head_dim;
  require(d > 0 && w_k.rows() == s.lambda.size(), ErrorKind::kShapeError,
          "fuse_smooth: w_k rows must match the smoothing vector");
  require(w_q.rows() % d == 0 && w_q.cols() == w_k.cols(), ErrorKind::kShapeError,
          "fuse_smooth: w_q shape is not conformable");
  const std::size_t heads = w_q.rows() / d;
  const std::size_t kv_heads = s.kv_heads();
  require(heads % kv_heads == 0, ErrorKind::kShapeError,
          "fuse_smooth: query heads must be a multiple of KV heads");
  const std::size_t ratio = heads / kv_heads;

  Matrix q = w_q;
  Matrix k = w_k;
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < d; ++i) {
      const double l = s.lambda[(h / ratio) * d + i];
      for (double& v : q.row(h * d + i)) v *= l;
    }
  for (std::size_t r = 0; r < k.rows(); ++r)
    for (double& v : k.row(r)) v /= s.lambda[r];
  return {std::move(q), std::move(k)};
}

std::vector<double> rope(std::span<const double> x, std::size_t position, double base) {
  require(x.size() % 2 == 0, ErrorKind::kShapeError, "rope: dimension must be even");
  const std::size_t d = x.size();
  const std::size_t half = d / 2;
  std::vector<double> out(d);
  for (std::size_t i = 0; i < half; ++i) {
    const double theta = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
    const double angle = static_cast<double>(position) * theta;
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    out[i] = x[i] * c - x[i + half] * s;
    out[i + half] = x[i] * s + x[i + half] * c;
  }
  return out;
}

Matrix hadamard(std::size_t n) {
  require(n >= 1 && (n & (n - 1)) == 0, ErrorKind::kUnsupported,
          "hadamard: size must be a power of two");
  Matrix h(n, n);
  h(0, 0) = 1.0;
  for (std::size_t len = 1; len < n; len *= 2)
    for (std::size_t r = 0; r < len; ++r)
      for (std::size_t c = 0; c < len; ++c) {
        const double v = h(r, c);
        h(r, c + len) = v;
        h(r + len, c) = v;
        h(r + len, c + len) = -v;
      }
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (double& v : h.data()) v *= scale;
  return h;
}

std::pair<Matrix, Matrix> rotate_block_input(const Matrix& x, const Matrix& w, const Matrix& q) {
  require(q.rows() == q.cols() && x.cols() == q.rows() && w.cols() == q.rows(),
          ErrorKind::kShapeError, "rotate_block_input: shapes are not conformable");
  return {matmul(x, q), matmul(w, q)};
}

OutputSmoothing smooth_output_module(const CalibStats& stats, const Matrix& w, double alpha) {
  require(stats.max_abs.size() == w.cols(), ErrorKind::kShapeError,
          "smooth_output_module: stats length must equal input channels");
  require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::kInvalidInput,
          "smooth_output_module: alpha must lie in [0, 1]");
  OutputSmoothing out;
  out.lambda.assign(w.cols(), 1.0);
  for (std::size_t j = 0; j < w.cols(); ++j) {
    double wmax = 0.0;
    for (std::size_t i = 0; i < w.rows(); ++i) wmax = std::max(wmax, std::abs(w(i, j)));
    const double l = std::pow(guard(stats.max_abs[j]), alpha) / std::pow(guard(wmax), 1.0 - alpha);
    out.lambda[j] = std::isfinite(l) && l > 0.0 ? l : 1.0;
  }
  out.w_fused = w;
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) out.w_fused(i, j) *= out.lambda[j];
  return out;
}

Matrix divide_columns(const Matrix& x, std::span<const double> lambda) {
  require(lambda.size() == x.cols(), ErrorKind::kShapeError, "divide_columns: length mismatch");
  Matrix out = x;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) /= lambda[c];
  return out;
}

ChannelPermutation reorder_channels(const CalibStats& stats, std::size_t group_size) {
  const std::size_t k = stats.max_abs.size();
  require(group_size >= 1 && k % group_size == 0, ErrorKind::kShapeError,
          "reorder_channels: group size must divide the channel count");
  ChannelPermutation p = ChannelPermutation::identity(k);
  std::stable_sort(p.perm.begin(), p.perm.end(), [&](std::size_t a, std::size_t b) {
    return stats.max_abs[a] > stats.max_abs[b];
  });
  for (std::size_t g = 0; g < k; g += group_size)
    std::sort(p.perm.begin() + static_cast<std::ptrdiff_t>(g),
              p.perm.begin() + static_cast<std::ptrdiff_t>(g + group_size));
  return p;
}

Matrix permute_columns(const Matrix& x, const ChannelPermutation& p) {
  require(p.size() == x.cols(), ErrorKind::kShapeError,
          "permute_columns: permutation length must equal column count");
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, p.perm[c]);
  return out;
}

std::pair<Matrix, Matrix> apply_permutation(const Matrix& x, const Matrix& w,
                                            const ChannelPermutation& p) {
  require(x.cols() == w.cols(), ErrorKind::kShapeError,
          "apply_permutation: reduction dimensions differ");
  require(p.is_bijection(), ErrorKind::kInvalidInput, "apply_permutation: not a bijection");
  return {permute_columns(x, p), permute_columns(w, p)};
}

std::vector<double> default_clip_grid() {
  std::vector<double> grid(20);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = 0.5 + 0.5 * static_cast<double>(i) / 19.0;
  return grid;
}

ClipResult clip_search(const Matrix& w, const Matrix& x_calib, const ClipForward& forward,
                       const ClipQuantizer& quantizer, std::span<const double> grid) {
  require(!grid.empty(), ErrorKind::kInvalidInput, "clip_search: empty grid");
  for (double a : grid)
    require(a > 0.0 && a <= 1.0, ErrorKind::kInvalidInput, "clip_search: ratio outside (0, 1]");
  const Matrix reference = forward(x_calib, w);
  ClipResult best;
  best.objectives.reserve(grid.size());
  bool first = true;
  for (double a : grid) {
    const Matrix out = forward(x_calib, quantizer(w, a));
    const double err = mean_squared_error(out, reference) * static_cast<double>(out.size());
    best.objectives.push_back(err);
    if (first || err < best.objective || (err == best.objective && a > best.alpha)) {
      best.alpha = a;
      best.objective = err;
      first = false;
    }
  }
  return best;
}

ClipResult clip_search(const Matrix& w, const Matrix& x_calib, ClipObjective objective,
                       const ClipQuantizer& quantizer, std::span<const double> grid,
                       const ClipForward& block_forward) {
  if (objective == ClipObjective::kLayerOutput) {
    return clip_search(w, x_calib, [](const Matrix& x, const Matrix& wt) { return matmul_nt(x, wt); },
                       quantizer, grid);
  }
  require(static_cast<bool>(block_forward), ErrorKind::kInvalidInput,
          "clip_search: block objective needs a block forward");
  return clip_search(w, x_calib, block_forward, quantizer, grid);
}

}  // namespace qtk
