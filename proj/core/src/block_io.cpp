// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qtk/block_io.hpp"

#include <sstream>

#include "qtk/error.hpp"

namespace qtk {
namespace {

void put_dims(TensorContainer& c, const BlockDims& d) {
  c.set_meta("dims.heads", std::to_string(d.heads));
  c.set_meta("dims.kv_heads", std::to_string(d.kv_heads));
  c.set_meta("dims.head_dim", std::to_string(d.head_dim));
  c.set_meta("dims.hidden", std::to_string(d.hidden));
  c.set_meta("dims.ffn", std::to_string(d.ffn));
}

std::size_t meta_size(const TensorContainer& c, const std::string& key) {
  const std::string& v = c.require_meta(key);
  try {
    std::size_t used = 0;
    const unsigned long long n = std::stoull(v, &used);
    require(used == v.size(), ErrorKind::kFormatError, "bad integer for " + key);
    return static_cast<std::size_t>(n);
  } catch (const std::logic_error&) {
    fail(ErrorKind::kFormatError, "bad integer for " + key + ": '" + v + "'");
  }
}

BlockDims get_dims(const TensorContainer& c) {
  BlockDims d;
  d.heads = meta_size(c, "dims.heads");
  d.kv_heads = meta_size(c, "dims.kv_heads");
  d.head_dim = meta_size(c, "dims.head_dim");
  d.hidden = meta_size(c, "dims.hidden");
  d.ffn = meta_size(c, "dims.ffn");
  d.validate();
  return d;
}

void expect_kind(const TensorContainer& c, const char* kind) {
  require(c.require_meta("kind") == kind, ErrorKind::kFormatError,
          std::string("container does not hold a ") + kind);
}

std::vector<double> as_doubles(const ChannelPermutation& p) {
  return {p.perm.begin(), p.perm.end()};
}

ChannelPermutation as_perm(const std::vector<double>& v) {
  ChannelPermutation p;
  for (double x : v) {
    require(x >= 0.0 && x == static_cast<double>(static_cast<std::size_t>(x)), ErrorKind::kFormatError,
            "permutation entries must be non-negative integers");
    p.perm.push_back(static_cast<std::size_t>(x));
  }
  require(p.is_bijection(), ErrorKind::kFormatError, "stored permutation is not a bijection");
  return p;
}

}  // namespace

TensorContainer block_to_container(const ToyBlock& block) {
  block.validate();
  TensorContainer c;
  c.set_meta("kind", kToyBlockKind);
  put_dims(c, block.dims);
  c.put_f64("norm_attn", block.norm_attn);
  c.put_f64("norm_ffn", block.norm_ffn);
  c.put_f64("w_qkv", block.w_qkv);
  c.put_f64("w_o", block.w_o);
  c.put_f64("w_ffn1", block.w_ffn1);
  c.put_f64("w_ffn2", block.w_ffn2);
  return c;
}

ToyBlock block_from_container(const TensorContainer& c) {
  expect_kind(c, kToyBlockKind);
  ToyBlock b;
  b.dims = get_dims(c);
  b.norm_attn = c.get_vector("norm_attn");
  b.norm_ffn = c.get_vector("norm_ffn");
  b.w_qkv = c.get_matrix("w_qkv");
  b.w_o = c.get_matrix("w_o");
  b.w_ffn1 = c.get_matrix("w_ffn1");
  b.w_ffn2 = c.get_matrix("w_ffn2");
  b.validate();
  return b;
}

TensorContainer quantized_to_container(const QuantizedBlock& qb) {
  TensorContainer c;
  c.set_meta("kind", kQuantizedBlockKind);
  put_dims(c, qb.dims);
  std::istringstream recipe(qb.recipe.describe());
  std::string key, value;
  while (recipe >> key >> value) c.set_meta("recipe." + key, value);
  if (!qb.rotation.empty()) c.put_f64("rotation", qb.rotation);
  c.put_f64("norm_attn", qb.norm_attn);
  c.put_f64("norm_ffn", qb.norm_ffn);

  for (const QuantLinear& l : qb.layers) {
    const std::string p = l.name + ".";
    c.set_meta(p + "out_rotated", l.out_rotated ? "1" : "0");
    c.put_f64(p + "clip_ratio", std::vector<double>{l.clip_ratio});
    c.put_f64(p + "out_scale", l.out_scale);
    if (!l.perm.perm.empty()) c.put_f64(p + "perm", as_doubles(l.perm));
    if (l.weight_bits == 16) {
      c.put_f64(p + "w", l.w);
    } else if (l.mode == WeightMode::kPerGroup) {
      c.put_u4(p + "codes", l.pw.codes);
      c.put_u4(p + "zeros", l.pw.zeros);
      c.put_u8(p + "scales_l2", l.pw.scales_l2);
      c.put_f16(p + "scales_l1", l.pw.scales_l1);
    } else {
      c.put_u4(p + "codes", l.qw.codes);
      c.put_f16(p + "scales", l.qw.scales);
      CodeMatrix z(1, l.qw.zeros.size(), l.qw.zeros);
      c.put_u8(p + "zeros", z);
    }
  }
  return c;
}

QuantizedBlock quantized_from_container(const TensorContainer& c) {
  expect_kind(c, kQuantizedBlockKind);
  QuantizedBlock qb;
  qb.dims = get_dims(c);
  std::string recipe;
  for (const auto& [k, v] : c.metadata())
    if (k.rfind("recipe.", 0) == 0) recipe += k.substr(7) + " " + v + "\n";
  qb.recipe = QuantRecipe::parse(recipe);
  qb.recipe.validate(qb.dims);
  if (c.contains("rotation")) qb.rotation = c.get_matrix("rotation");
  qb.norm_attn = c.get_vector("norm_attn");
  qb.norm_ffn = c.get_vector("norm_ffn");

  for (std::size_t i = 0; i < kLayerCount; ++i) {
    QuantLinear& l = qb.layers[i];
    l.name = kLayerNames[i];
    const std::string p = l.name + ".";
    l.act_bits = qb.recipe.act_bits;
    l.weight_bits = qb.recipe.weight_bits;
    l.mode = qb.recipe.weight_mode;
    l.out_rotated = c.require_meta(p + "out_rotated") == "1";
    l.clip_ratio = c.get_vector(p + "clip_ratio").at(0);
    l.out_scale = c.get_vector(p + "out_scale");
    if (c.contains(p + "perm")) l.perm = as_perm(c.get_vector(p + "perm"));
    if (l.weight_bits == 16) {
      l.w = c.get_matrix(p + "w");
    } else if (l.mode == WeightMode::kPerGroup) {
      ProgressiveWeight& pw = l.pw;
      pw.codes = c.get_codes(p + "codes");
      pw.n = pw.codes.rows();
      pw.k = pw.codes.cols();
      pw.group_size = qb.recipe.group_size;
      pw.zeros = c.get_codes(p + "zeros");
      pw.scales_l2 = c.get_codes(p + "scales_l2");
      pw.scales_l1 = c.get_vector(p + "scales_l1");
      require(pw.k % pw.group_size == 0 && pw.zeros.rows() == pw.n &&
                  pw.zeros.cols() == pw.k / pw.group_size && pw.scales_l2.rows() == pw.n &&
                  pw.scales_l2.cols() == pw.zeros.cols() && pw.scales_l1.size() == pw.n,
              ErrorKind::kFormatError, "layer " + l.name + ": inconsistent per-group tensors");
      l.packed = pack_weights(pw.codes);
    } else {
      QuantizedTensor& qw = l.qw;
      qw.codes = c.get_codes(p + "codes");
      qw.scales = c.get_vector(p + "scales");
      qw.zeros = c.get_codes(p + "zeros").storage();
      qw.spec = QuantSpec::asymmetric_unsigned(4, Granularity::per_channel());
      require(qw.scales.size() == qw.rows() && qw.zeros.size() == qw.rows(), ErrorKind::kFormatError,
              "layer " + l.name + ": inconsistent per-channel tensors");
    }
  }
  return qb;
}

}  // namespace qtk
