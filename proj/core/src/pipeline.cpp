// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qtk/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "qtk/error.hpp"
#include "qtk/kv_cache.hpp"

namespace qtk {
namespace {

constexpr std::size_t kQkv = 0, kO = 1, kFfn1 = 2, kFfn2 = 3;

Matrix add(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::kShapeError,
          "residual add: shapes differ");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

Matrix slice_cols(const Matrix& x, std::size_t c0, std::size_t width) {
  Matrix out(x.rows(), width);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < width; ++c) out(r, c) = x(r, c0 + c);
  return out;
}

Matrix slice_rows(const Matrix& x, std::size_t r0, std::size_t count) {
  Matrix out(count, x.cols());
  for (std::size_t r = 0; r < count; ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r0 + r, c);
  return out;
}

// One token's heads, each head_dim wide, rotary-embedded at `pos`.
Matrix rope_heads(std::span<const double> row, std::size_t heads, std::size_t d, std::size_t pos) {
  Matrix out(heads, d);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto r = rope(row.subspan(h * d, d), pos);
    std::copy(r.begin(), r.end(), out.row(h).begin());
  }
  return out;
}

Matrix scale_cols(const Matrix& x, std::span<const double> s) {
  Matrix out = x;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) *= s[c];
  return out;
}

double guard(double v) { return v > 0.0 && std::isfinite(v) ? v : 1.0; }

bool is_bits(int b, std::initializer_list<int> allowed) {
  return std::find(allowed.begin(), allowed.end(), b) != allowed.end();
}

// k (input) and n (output) of each linear layer.
std::pair<std::size_t, std::size_t> layer_shape(const BlockDims& d, std::size_t layer) {
  switch (layer) {
    case kQkv: return {d.hidden, d.qkv_width()};
    case kO: return {d.q_width(), d.hidden};
    case kFfn1: return {d.hidden, 2 * d.ffn};
    default: return {d.ffn, d.hidden};
  }
}

Matrix& layer_weight(ToyBlock& b, std::size_t layer) {
  switch (layer) {
    case kQkv: return b.w_qkv;
    case kO: return b.w_o;
    case kFfn1: return b.w_ffn1;
    default: return b.w_ffn2;
  }
}

Matrix quantize_weight_float(const Matrix& w, const QuantRecipe& r, double clip) {
  if (r.weight_mode == WeightMode::kPerGroup) return dequantize_full(quantize_progressive(w, r.group_size, clip));
  return dequantize(quantize(w, QuantSpec::asymmetric_unsigned(4, Granularity::per_channel()),
                             {ScaleStorage::kF16, clip}));
}

std::string format_alpha(const std::optional<double>& a) {
  if (!a) return "off";
  std::ostringstream s;
  s.precision(17);
  s << *a;
  return s.str();
}

}  // namespace

void BlockDims::validate() const {
  require(heads > 0 && kv_heads > 0 && heads % kv_heads == 0, ErrorKind::kShapeError,
          "block: heads must be a multiple of kv_heads");
  require(head_dim > 0 && head_dim % 2 == 0, ErrorKind::kShapeError,
          "block: head_dim must be even");
  require(hidden > 0 && ffn > 0, ErrorKind::kShapeError, "block: empty hidden or ffn width");
}

void ToyBlock::validate() const {
  dims.validate();
  auto shape = [](const Matrix& m, std::size_t r, std::size_t c, const char* what) {
    require(m.rows() == r && m.cols() == c, ErrorKind::kShapeError,
            std::string("block: ") + what + " has the wrong shape");
  };
  shape(w_qkv, dims.qkv_width(), dims.hidden, "w_qkv");
  shape(w_o, dims.hidden, dims.q_width(), "w_o");
  shape(w_ffn1, 2 * dims.ffn, dims.hidden, "w_ffn1");
  shape(w_ffn2, dims.hidden, dims.ffn, "w_ffn2");
  require(norm_attn.size() == dims.hidden && norm_ffn.size() == dims.hidden,
          ErrorKind::kShapeError, "block: norm gains must have hidden entries");
}

Matrix rms_norm(const Matrix& x, std::span<const double> gamma) {
  require(gamma.size() == x.cols(), ErrorKind::kShapeError, "rms_norm: gain length differs");
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double ss = 0.0;
    for (double v : x.row(r)) ss += v * v;
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.cols()) + kRmsNormEps);
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) * inv * gamma[c];
  }
  return out;
}

Matrix swiglu(const Matrix& gate_up) {
  require(gate_up.cols() % 2 == 0, ErrorKind::kShapeError, "swiglu: width must be even");
  const std::size_t f = gate_up.cols() / 2;
  Matrix out(gate_up.rows(), f);
  for (std::size_t r = 0; r < gate_up.rows(); ++r)
    for (std::size_t c = 0; c < f; ++c) {
      const double g = gate_up(r, c);
      out(r, c) = g / (1.0 + std::exp(-g)) * gate_up(r, f + c);
    }
  return out;
}

Matrix causal_attention(const Matrix& qkv, const BlockDims& dims) {
  dims.validate();
  require(qkv.cols() == dims.qkv_width(), ErrorKind::kShapeError,
          "causal_attention: width must be (heads + 2 kv_heads) * head_dim");
  const std::size_t d = dims.head_dim;
  const std::size_t tokens = qkv.rows();
  Matrix keys(tokens, dims.kv_width());
  const Matrix values = slice_cols(qkv, dims.q_width() + dims.kv_width(), dims.kv_width());
  for (std::size_t t = 0; t < tokens; ++t) {
    const Matrix k = rope_heads(qkv.row(t).subspan(dims.q_width(), dims.kv_width()), dims.kv_heads, d, t);
    std::copy(k.data().begin(), k.data().end(), keys.row(t).begin());
  }
  Matrix out(tokens, dims.q_width());
  for (std::size_t t = 0; t < tokens; ++t) {
    DecodeQuery dq{rope_heads(qkv.row(t).subspan(0, dims.q_width()), dims.heads, d, t),
                   dims.gqa_ratio()};
    const Matrix o = attention_exact(slice_rows(keys, 0, t + 1), slice_rows(values, 0, t + 1), dq, d);
    std::copy(o.data().begin(), o.data().end(), out.row(t).begin());
  }
  return out;
}

Matrix forward(const ToyBlock& block, const Matrix& x, BlockTrace* trace) {
  block.validate();
  require(x.cols() == block.dims.hidden, ErrorKind::kShapeError,
          "forward: input width differs from hidden size");
  const Matrix h = rms_norm(x, block.norm_attn);
  const Matrix qkv = matmul_nt(h, block.w_qkv);
  const Matrix attn = causal_attention(qkv, block.dims);
  const Matrix o = matmul_nt(attn, block.w_o);
  const Matrix x1 = add(x, o);
  const Matrix h2 = rms_norm(x1, block.norm_ffn);
  const Matrix gu = matmul_nt(h2, block.w_ffn1);
  const Matrix a = swiglu(gu);
  const Matrix y = matmul_nt(a, block.w_ffn2);
  if (trace) {
    trace->inputs[kQkv] = h;
    trace->outputs[kQkv] = qkv;
    trace->inputs[kO] = attn;
    trace->outputs[kO] = o;
    trace->inputs[kFfn1] = h2;
    trace->outputs[kFfn1] = gu;
    trace->inputs[kFfn2] = a;
    trace->outputs[kFfn2] = y;
    trace->keys = slice_cols(qkv, block.dims.q_width(), block.dims.kv_width());
  }
  return add(x1, y);
}

BlockStats calibrate(const ToyBlock& block, const Matrix& x_calib) {
  BlockTrace trace;
  forward(block, x_calib, &trace);
  BlockStats stats;
  for (std::size_t l = 0; l < kLayerCount; ++l)
    stats.layers[l] = CalibStats::from_activations(trace.inputs[l]);
  return stats;
}

QuantRecipe QuantRecipe::qoq(std::size_t group_size) {
  QuantRecipe r;
  r.group_size = group_size;
  return r;
}

QuantRecipe QuantRecipe::rtn() {
  QuantRecipe r;
  r.rotate = false;
  r.smooth_attention_alpha.reset();
  r.output_smooth_alpha.reset();
  r.reorder = false;
  r.clip_grid.clear();
  r.weight_mode = WeightMode::kPerChannel;
  return r;
}

QuantRecipe QuantRecipe::identity() {
  QuantRecipe r = rtn();
  r.weight_bits = 16;
  r.act_bits = 16;
  r.kv_bits = 16;
  return r;
}

void QuantRecipe::validate(const BlockDims& dims) const {
  dims.validate();
  require(is_bits(weight_bits, {4, 16}), ErrorKind::kInvalidConfig, "recipe: weight bits must be 4 or 16");
  require(is_bits(act_bits, {8, 16}), ErrorKind::kInvalidConfig, "recipe: activation bits must be 8 or 16");
  require(is_bits(kv_bits, {4, 8, 16}), ErrorKind::kInvalidConfig, "recipe: kv bits must be 4, 8 or 16");
  for (const auto& a : {smooth_attention_alpha, output_smooth_alpha})
    require(!a || (*a >= 0.0 && *a <= 1.0), ErrorKind::kInvalidConfig,
            "recipe: smoothing alpha must lie in [0, 1]");
  for (double c : clip_grid)
    require(c > 0.0 && c <= 1.0, ErrorKind::kInvalidConfig, "recipe: clip ratios must lie in (0, 1]");
  const bool grouped = weight_bits == 4 && weight_mode == WeightMode::kPerGroup;
  if (grouped || reorder) {
    require(group_size >= 1, ErrorKind::kInvalidConfig, "recipe: group size must be positive");
    for (std::size_t l = 0; l < kLayerCount; ++l) {
      const auto [k, n] = layer_shape(dims, l);
      require(k % group_size == 0, ErrorKind::kInvalidConfig,
              std::string("recipe: group size must divide the input width of ") + kLayerNames[l]);
      if (grouped)
        require(group_size % kTileDim == 0 && n % kTileDim == 0, ErrorKind::kInvalidConfig,
                std::string("recipe: per-group weights need g and the output width of ") +
                    kLayerNames[l] + " to be multiples of 32");
    }
  }
  if (rotate)
    require((dims.hidden & (dims.hidden - 1)) == 0, ErrorKind::kInvalidConfig,
            "recipe: rotation needs a power-of-two hidden size");
}

std::string QuantRecipe::describe() const {
  std::ostringstream s;
  s.precision(17);
  s << "rotate " << (rotate ? "on" : "off") << '\n'
    << "smooth_attention_alpha " << format_alpha(smooth_attention_alpha) << '\n'
    << "output_smooth_alpha " << format_alpha(output_smooth_alpha) << '\n'
    << "reorder " << (reorder ? "on" : "off") << '\n'
    << "clip_grid ";
  if (clip_grid.empty()) s << "off";
  for (std::size_t i = 0; i < clip_grid.size(); ++i) s << (i ? "," : "") << clip_grid[i];
  s << '\n'
    << "weight_mode " << (weight_mode == WeightMode::kPerGroup ? "per-group" : "per-channel") << '\n'
    << "group_size " << group_size << '\n'
    << "weight_bits " << weight_bits << '\n'
    << "act_bits " << act_bits << '\n'
    << "kv_bits " << kv_bits << '\n';
  return s.str();
}

QuantRecipe QuantRecipe::parse(const std::string& text) {
  QuantRecipe r;
  std::istringstream in(text);
  std::string key, value;
  auto on_off = [](const std::string& v) {
    require(v == "on" || v == "off", ErrorKind::kFormatError, "recipe: expected on/off, got " + v);
    return v == "on";
  };
  auto number = [](const std::string& v) {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      require(used == v.size(), ErrorKind::kFormatError, "recipe: bad number " + v);
      return d;
    } catch (const std::logic_error&) {
      fail(ErrorKind::kFormatError, "recipe: bad number " + v);
    }
  };
  auto alpha = [&](const std::string& v) -> std::optional<double> {
    if (v == "off") return std::nullopt;
    return number(v);
  };
  while (in >> key >> value) {
    if (key == "rotate") r.rotate = on_off(value);
    else if (key == "smooth_attention_alpha") r.smooth_attention_alpha = alpha(value);
    else if (key == "output_smooth_alpha") r.output_smooth_alpha = alpha(value);
    else if (key == "reorder") r.reorder = on_off(value);
    else if (key == "clip_grid") {
      r.clip_grid.clear();
      if (value != "off") {
        std::istringstream items(value);
        std::string item;
        while (std::getline(items, item, ',')) r.clip_grid.push_back(number(item));
      }
    } else if (key == "weight_mode") {
      require(value == "per-group" || value == "per-channel", ErrorKind::kFormatError,
              "recipe: unknown weight mode " + value);
      r.weight_mode = value == "per-group" ? WeightMode::kPerGroup : WeightMode::kPerChannel;
    } else if (key == "group_size") r.group_size = static_cast<std::size_t>(number(value));
    else if (key == "weight_bits") r.weight_bits = static_cast<int>(number(value));
    else if (key == "act_bits") r.act_bits = static_cast<int>(number(value));
    else if (key == "kv_bits") r.kv_bits = static_cast<int>(number(value));
    else fail(ErrorKind::kFormatError, "recipe: unknown key " + key);
  }
  return r;
}

std::size_t QuantLinear::in_features() const {
  if (weight_bits == 16) return w.cols();
  return mode == WeightMode::kPerGroup ? pw.k : qw.cols();
}

std::size_t QuantLinear::out_features() const {
  if (weight_bits == 16) return w.rows();
  return mode == WeightMode::kPerGroup ? pw.n : qw.rows();
}

Matrix QuantLinear::effective_weight() const {
  if (weight_bits == 16) return w;
  return mode == WeightMode::kPerGroup ? dequantize_full(pw) : dequantize(qw);
}

Matrix QuantLinear::apply(const Matrix& x) const {
  require(x.cols() == in_features(), ErrorKind::kShapeError,
          "linear " + name + ": input width differs from the layer");
  const Matrix xg = perm.perm.empty() ? x : permute_columns(x, perm);
  if (act_bits == 16) return matmul_nt(xg, effective_weight());
  const QuantizedTensor qx = quantize(xg, QuantSpec::symmetric_signed(8, Granularity::per_channel()));
  if (weight_bits == 16) return matmul_nt(dequantize(qx), w);
  if (mode == WeightMode::kPerGroup) return gemm_w4a8_per_group(qx, pw, packed);
  return gemm_w4a8_per_channel(qx, qw, precompute_token_sums(dequantize(qx)));
}

Matrix QuantizedBlock::forward(const Matrix& x, BlockTrace* trace) const {
  require(x.cols() == dims.hidden, ErrorKind::kShapeError,
          "forward: input width differs from hidden size");
  const bool rotated = !rotation.empty();
  const Matrix xr = rotated ? matmul(x, rotation) : x;
  const std::size_t d = dims.head_dim;

  const Matrix h = rms_norm(xr, norm_attn);
  const Matrix qkv = layers[kQkv].apply(h);

  Matrix attn(x.rows(), dims.q_width());
  if (recipe.kv_bits == 16) {
    attn = causal_attention(qkv, dims);
  } else {
    KvPageStore store(KvConfig{dims.kv_heads, d, kDefaultPageSize, recipe.kv_bits});
    for (std::size_t t = 0; t < x.rows(); ++t) {
      const auto row = qkv.row(t);
      const Matrix k = rope_heads(row.subspan(dims.q_width(), dims.kv_width()), dims.kv_heads, d, t);
      Matrix v(dims.kv_heads, d);
      const auto vsrc = row.subspan(dims.q_width() + dims.kv_width(), dims.kv_width());
      std::copy(vsrc.begin(), vsrc.end(), v.data().begin());
      store.append_token(k, v);
      const DecodeQuery dq{rope_heads(row.subspan(0, dims.q_width()), dims.heads, d, t),
                           dims.gqa_ratio()};
      const Matrix o = attention_decode(store, dq);
      std::copy(o.data().begin(), o.data().end(), attn.row(t).begin());
    }
  }

  const Matrix o = layers[kO].apply(attn);
  const Matrix x1 = add(xr, o);
  const Matrix h2 = rms_norm(x1, norm_ffn);
  const Matrix gu = layers[kFfn1].apply(h2);
  const Matrix a = swiglu(gu);
  const Matrix y = layers[kFfn2].apply(a);
  const Matrix out = add(x1, y);

  if (trace) {
    const Matrix* ins[] = {&h, &attn, &h2, &a};
    const Matrix* outs[] = {&qkv, &o, &gu, &y};
    for (std::size_t l = 0; l < kLayerCount; ++l) {
      trace->inputs[l] = *ins[l];
      Matrix canon = scale_cols(*outs[l], layers[l].out_scale);
      if (layers[l].out_rotated && rotated) canon = matmul_nt(canon, rotation);
      trace->outputs[l] = std::move(canon);
    }
    trace->keys = slice_cols(trace->outputs[kQkv], dims.q_width(), dims.kv_width());
  }
  return rotated ? matmul_nt(out, rotation) : out;
}

QuantizedBlock apply_qoq(const ToyBlock& block, const QuantRecipe& recipe, const Matrix& x_calib) {
  block.validate();
  recipe.validate(block.dims);
  const BlockDims& dims = block.dims;
  require(x_calib.cols() == dims.hidden && x_calib.rows() > 0, ErrorKind::kShapeError,
          "apply_qoq: calibration input must be tokens x hidden");

  ToyBlock b = block;
  Matrix xc = x_calib;
  QuantizedBlock qb;
  qb.dims = dims;
  qb.recipe = recipe;
  std::vector<double> out_scale[kLayerCount];
  for (std::size_t l = 0; l < kLayerCount; ++l) out_scale[l].assign(layer_shape(dims, l).second, 1.0);

  if (recipe.rotate) {
    // Fold the norm gains into the consuming weights, then rotate the
    // residual stream: inputs by Q, weights reading it by Q, weights writing
    // it by Q^T.
    const Matrix q = hadamard(dims.hidden);
    for (Matrix* w : {&b.w_qkv, &b.w_ffn1}) {
      const auto& gamma = w == &b.w_qkv ? b.norm_attn : b.norm_ffn;
      *w = matmul(scale_cols(*w, gamma), q);
    }
    const Matrix qt = transpose(q);
    b.w_o = matmul(qt, b.w_o);
    b.w_ffn2 = matmul(qt, b.w_ffn2);
    b.norm_attn.assign(dims.hidden, 1.0);
    b.norm_ffn.assign(dims.hidden, 1.0);
    xc = matmul(xc, q);
    qb.rotation = q;
  }

  if (recipe.output_smooth_alpha) {
    const double alpha = *recipe.output_smooth_alpha;
    BlockTrace tr;
    forward(b, xc, &tr);
    // W_o: one factor per (kv head, dim), shared by the query heads reading
    // that value head, and divided out of the value projection.
    const CalibStats so = CalibStats::from_activations(tr.inputs[kO]);
    std::vector<double> xmax(dims.kv_width(), 0.0), wmax(dims.kv_width(), 0.0);
    for (std::size_t c = 0; c < dims.q_width(); ++c) {
      const std::size_t tied = (c / dims.head_dim / dims.gqa_ratio()) * dims.head_dim + c % dims.head_dim;
      xmax[tied] = std::max(xmax[tied], so.max_abs[c]);
      for (std::size_t r = 0; r < b.w_o.rows(); ++r) wmax[tied] = std::max(wmax[tied], std::abs(b.w_o(r, c)));
    }
    std::vector<double> lam(dims.kv_width());
    for (std::size_t i = 0; i < lam.size(); ++i) {
      const double l = std::pow(guard(xmax[i]), alpha) / std::pow(guard(wmax[i]), 1.0 - alpha);
      lam[i] = std::isfinite(l) && l > 0.0 ? l : 1.0;
    }
    const std::size_t v0 = dims.q_width() + dims.kv_width();
    for (std::size_t c = 0; c < dims.q_width(); ++c) {
      const double l = lam[(c / dims.head_dim / dims.gqa_ratio()) * dims.head_dim + c % dims.head_dim];
      for (std::size_t r = 0; r < b.w_o.rows(); ++r) b.w_o(r, c) *= l;
    }
    for (std::size_t i = 0; i < dims.kv_width(); ++i) {
      for (double& v : b.w_qkv.row(v0 + i)) v /= lam[i];
      out_scale[kQkv][v0 + i] = lam[i];
    }
    // W_ffn2: divided out of the up projection (SwiGLU is linear in it).
    const OutputSmoothing sf =
        smooth_output_module(CalibStats::from_activations(tr.inputs[kFfn2]), b.w_ffn2, alpha);
    b.w_ffn2 = sf.w_fused;
    for (std::size_t j = 0; j < dims.ffn; ++j) {
      for (double& v : b.w_ffn1.row(dims.ffn + j)) v /= sf.lambda[j];
      out_scale[kFfn1][dims.ffn + j] = sf.lambda[j];
    }
  }

  if (recipe.smooth_attention_alpha) {
    BlockTrace tr;
    forward(b, xc, &tr);
    const SmoothScales s =
        smooth_attention_scales_multihead(tr.keys, *recipe.smooth_attention_alpha, dims.head_dim);
    auto [wq, wk] = fuse_smooth_into_projections(slice_rows(b.w_qkv, 0, dims.q_width()),
                                                 slice_rows(b.w_qkv, dims.q_width(), dims.kv_width()), s);
    for (std::size_t r = 0; r < dims.q_width(); ++r) {
      std::copy(wq.row(r).begin(), wq.row(r).end(), b.w_qkv.row(r).begin());
      out_scale[kQkv][r] = 1.0 / s.lambda[(r / dims.head_dim / dims.gqa_ratio()) * dims.head_dim +
                                          r % dims.head_dim];
    }
    for (std::size_t r = 0; r < dims.kv_width(); ++r) {
      std::copy(wk.row(r).begin(), wk.row(r).end(), b.w_qkv.row(dims.q_width() + r).begin());
      out_scale[kQkv][dims.q_width() + r] = s.lambda[r];
    }
  }

  BlockTrace tr;
  forward(b, xc, &tr);
  qb.norm_attn = b.norm_attn;
  qb.norm_ffn = b.norm_ffn;

  for (std::size_t l = 0; l < kLayerCount; ++l) {
    QuantLinear& ql = qb.layers[l];
    ql.name = kLayerNames[l];
    ql.act_bits = recipe.act_bits;
    ql.weight_bits = recipe.weight_bits;
    ql.mode = recipe.weight_mode;
    ql.out_scale = out_scale[l];
    ql.out_rotated = recipe.rotate && (l == kO || l == kFfn2);

    Matrix w = layer_weight(b, l);
    Matrix x = tr.inputs[l];
    if (recipe.reorder) {
      ql.perm = reorder_channels(CalibStats::from_activations(x), recipe.group_size);
      x = permute_columns(x, ql.perm);
      w = permute_columns(w, ql.perm);
    }

    if (recipe.weight_bits == 16) {
      ql.w = std::move(w);
      continue;
    }
    if (!recipe.clip_grid.empty()) {
      const ClipQuantizer quantizer = [&recipe](const Matrix& wm, double a) {
        return quantize_weight_float(wm, recipe, a);
      };
      const ClipResult cr =
          l == kQkv ? clip_search(w, x, ClipObjective::kBlockOutput, quantizer, recipe.clip_grid,
                                  [&dims](const Matrix& xm, const Matrix& wm) {
                                    return causal_attention(matmul_nt(xm, wm), dims);
                                  })
                    : clip_search(w, x, ClipObjective::kLayerOutput, quantizer, recipe.clip_grid);
      ql.clip_ratio = cr.alpha;
    }
    if (recipe.weight_mode == WeightMode::kPerGroup) {
      ql.pw = quantize_progressive(w, recipe.group_size, ql.clip_ratio);
      ql.packed = pack_weights(ql.pw.codes);
    } else {
      ql.qw = quantize(w, QuantSpec::asymmetric_unsigned(4, Granularity::per_channel()),
                       {ScaleStorage::kF16, ql.clip_ratio});
    }
  }
  return qb;
}

FidelityReport evaluate_fidelity(const ToyBlock& block, const QuantizedBlock& qblock,
                                 const Matrix& x_eval) {
  require(block.dims == qblock.dims, ErrorKind::kShapeError,
          "evaluate_fidelity: blocks have different dimensions");
  BlockTrace ref, got;
  const Matrix y_ref = forward(block, x_eval, &ref);
  const Matrix y = qblock.forward(x_eval, &got);
  FidelityReport rep;
  rep.tokens = x_eval.rows();
  for (std::size_t l = 0; l < kLayerCount; ++l)
    rep.layers.push_back({kLayerNames[l], mean_squared_error(got.outputs[l], ref.outputs[l]),
                          max_abs_error(got.outputs[l], ref.outputs[l])});
  rep.mse = mean_squared_error(y, y_ref);
  rep.max_error = max_abs_error(y, y_ref);
  rep.relative_error = relative_frobenius_error(y, y_ref);
  return rep;
}

ToyBlock make_synthetic_block(const BlockDims& dims, std::uint64_t seed) {
  dims.validate();
  std::mt19937_64 rng(seed);
  std::student_t_distribution<double> heavy(5.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double t_unit = std::sqrt(3.0 / 5.0);  // unit variance for nu = 5
  std::bernoulli_distribution outlier(1.0 / 128.0);

  auto fill = [&](std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    const double s = t_unit / std::sqrt(static_cast<double>(cols));
    for (double& v : m.data()) v = heavy(rng) * s;
    // Sparse large weights, roughly one per 128 entries.
    for (double& v : m.data())
      if (outlier(rng)) v *= 6.0 + 4.0 * std::abs(normal(rng));
    return m;
  };
  auto pick = [&](std::size_t n, std::size_t count) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(count, n));
    return idx;
  };

  ToyBlock b;
  b.dims = dims;
  b.w_qkv = fill(dims.qkv_width(), dims.hidden);
  b.w_o = fill(dims.hidden, dims.q_width());
  b.w_ffn1 = fill(2 * dims.ffn, dims.hidden);
  b.w_ffn2 = fill(dims.hidden, dims.ffn);
  for (auto* g : {&b.norm_attn, &b.norm_ffn}) {
    g->resize(dims.hidden);
    for (double& v : *g) v = 1.0 + 0.1 * normal(rng);
    for (std::size_t c : pick(dims.hidden, std::max<std::size_t>(1, dims.hidden / 16)))
      (*g)[c] *= 4.0 + 2.0 * std::abs(normal(rng));
  }
  // Keep attention logits moderate so the softmax is not saturated.
  for (std::size_t r = 0; r < dims.q_width(); ++r)
    for (double& v : b.w_qkv.row(r)) v *= 0.25;
  // Key outliers on one rotary pair per KV head.
  for (std::size_t h = 0; h < dims.kv_heads; ++h) {
    const std::size_t i = pick(dims.head_dim / 2, 1)[0];
    for (std::size_t c : {i, i + dims.head_dim / 2})
      for (double& v : b.w_qkv.row(dims.q_width() + h * dims.head_dim + c)) v *= 4.0;
  }
  for (std::size_t r : pick(dims.kv_width(), std::max<std::size_t>(1, dims.kv_width() / 8)))
    for (double& v : b.w_qkv.row(dims.q_width() + dims.kv_width() + r)) v *= 3.0;
  for (std::size_t r : pick(dims.ffn, std::max<std::size_t>(1, dims.ffn / 32)))
    for (double& v : b.w_ffn1.row(dims.ffn + r)) v *= 3.0;
  return b;
}

Matrix make_synthetic_inputs(std::size_t tokens, std::size_t hidden, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::student_t_distribution<double> heavy(5.0);
  Matrix x(tokens, hidden);
  for (double& v : x.data()) v = heavy(rng);
  return x;
}

}  // namespace qtk
