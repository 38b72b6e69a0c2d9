// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qtk/kv_cache.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qtk/kv_dequant_kernels.hpp"
#include "qtk/quant_core.hpp"

namespace qtk {
namespace {

// Counts operations while delegating the arithmetic to F16Machine.
struct CountingMachine {
  kernels::F16Machine exec;
  OpCounts counts;

  std::uint32_t lop3_and_or(std::uint32_t a, std::uint32_t mask, std::uint32_t magic) {
    ++counts.logical;
    return exec.lop3_and_or(a, mask, magic);
  }
  std::uint32_t shr(std::uint32_t a, int s) {
    ++counts.shift;
    return exec.shr(a, s);
  }
  std::uint32_t band(std::uint32_t a, std::uint32_t m) {
    ++counts.logical;
    return exec.band(a, m);
  }
  double to_half(std::uint32_t bits) { return exec.to_half(bits); }
  double i2f(std::uint32_t a) {
    ++counts.convert;
    return exec.i2f(a);
  }
  double fsub(double a, double b) {
    ++counts.arith;
    return exec.fsub(a, b);
  }
  double fmul(double a, double b) {
    ++counts.arith;
    return exec.fmul(a, b);
  }
  double fma(double a, double b, double c) {
    ++counts.fma;
    return exec.fma(a, b, c);
  }
};

std::uint32_t code_mask(int bits) { return (1u << bits) - 1u; }

void put_u16(std::vector<std::uint8_t>& buf, std::size_t off, std::uint16_t v) {
  buf[off] = static_cast<std::uint8_t>(v & 0xFF);
  buf[off + 1] = static_cast<std::uint8_t>(v >> 8);
}

std::uint16_t get_u16(std::span<const std::uint8_t> buf, std::size_t off) {
  return static_cast<std::uint16_t>(buf[off] | buf[off + 1] << 8);
}

}  // namespace

void KvConfig::validate() const {
  require(kv_heads >= 1, ErrorKind::kInvalidInput, "KvConfig: need at least one KV head");
  require(head_dim >= 2 && head_dim % 2 == 0, ErrorKind::kInvalidInput,
          "KvConfig: head dim must be even");
  require(page_size >= 1, ErrorKind::kInvalidInput, "KvConfig: page size must be positive");
  require(kv_bits == 4 || kv_bits == 8, ErrorKind::kUnsupported, "KvConfig: kv bits must be 4 or 8");
}

KvPageStore::KvPageStore(KvConfig config) : config_(config) { config_.validate(); }

std::size_t KvPageStore::part_offset(KvPart part, std::size_t head) const {
  const std::size_t half = config_.code_bytes() + 4 * config_.page_size;
  return head * config_.head_stride() + (part == KvPart::kValue ? half : 0);
}

void KvPageStore::write_row(std::vector<std::uint8_t>& page, KvPart part, std::size_t slot,
                            std::size_t head, std::span<const double> row) {
  const auto spec = QuantSpec::asymmetric_unsigned(config_.kv_bits, Granularity::per_tensor());
  const auto [mn, mx] = std::minmax_element(row.begin(), row.end());
  const ScaleZero sz = compute_scale_zero(*mn, *mx, spec, ScaleStorage::kF16);

  const std::size_t base = part_offset(part, head);
  const std::size_t row_bytes = config_.head_dim * config_.kv_bits / 8;
  for (std::size_t d = 0; d < config_.head_dim; ++d) {
    const auto code = static_cast<std::uint8_t>(quantize_value(row[d], sz, spec));
    if (config_.kv_bits == 8) {
      page[base + slot * row_bytes + d] = code;
    } else {
      const std::size_t off = base + slot * row_bytes + d / 2;
      page[off] |= static_cast<std::uint8_t>(d % 2 == 0 ? code : code << 4);
    }
  }
  const std::size_t params = base + config_.code_bytes() + 4 * slot;
  put_u16(page, params, f16_bits(sz.scale));
  put_u16(page, params + 2, f16_bits(static_cast<double>(sz.zero)));
}

void KvPageStore::append_token(const Matrix& k, const Matrix& v) {
  for (const Matrix* m : {&k, &v}) {
    require(m->rows() == config_.kv_heads && m->cols() == config_.head_dim, ErrorKind::kShapeError,
            "append_token: expected kv_heads x head_dim");
    require(all_finite(*m), ErrorKind::kInvalidInput, "append_token: non-finite input");
  }
  const std::size_t slot = tokens_ % config_.page_size;
  if (slot == 0) pages_.emplace_back(config_.page_bytes(), std::uint8_t{0});
  auto& page = pages_.back();
  for (std::size_t h = 0; h < config_.kv_heads; ++h) {
    write_row(page, KvPart::kKey, slot, h, k.row(h));
    write_row(page, KvPart::kValue, slot, h, v.row(h));
  }
  ++tokens_;
}

std::uint32_t KvPageStore::code(KvPart part, std::size_t token, std::size_t head,
                                std::size_t dim) const {
  require(token < tokens_ && head < config_.kv_heads && dim < config_.head_dim,
          ErrorKind::kInvalidInput, "KvPageStore::code: index out of range");
  const auto& page = pages_[token / config_.page_size];
  const std::size_t slot = token % config_.page_size;
  const std::size_t row_bytes = config_.head_dim * config_.kv_bits / 8;
  const std::size_t base = part_offset(part, head) + slot * row_bytes;
  if (config_.kv_bits == 8) return page[base + dim];
  const std::uint8_t byte = page[base + dim / 2];
  return dim % 2 == 0 ? (byte & 0x0F) : (byte >> 4);
}

KvParams KvPageStore::params(KvPart part, std::size_t token, std::size_t head) const {
  require(token < tokens_ && head < config_.kv_heads, ErrorKind::kInvalidInput,
          "KvPageStore::params: index out of range");
  const auto& page = pages_[token / config_.page_size];
  const std::size_t off =
      part_offset(part, head) + config_.code_bytes() + 4 * (token % config_.page_size);
  return {get_u16(page, off), get_u16(page, off + 2)};
}

double dequant_fp16_trick(std::uint32_t code, double scale_f16, double zero_f16) {
  kernels::F16Machine m;
  return kernels::dequant_trick(m, code, 0x00FFu, kernels::make_trick_constants(scale_f16, zero_f16));
}

double dequant_naive(std::uint32_t packed, int shift, double scale_f16, double zero_f16) {
  kernels::F16Machine m;
  return kernels::dequant_naive(m, packed, shift, 0x0Fu, scale_f16, zero_f16);
}

OpCounts dequant_op_counts(DequantPath path) {
  CountingMachine m;
  if (path == DequantPath::kTrick) {
    kernels::dequant_trick(m, 0x7u, 0x0Fu, kernels::make_trick_constants(0.5, 3.0));
  } else {
    kernels::dequant_naive(m, 0x70u, 4, 0x0Fu, 0.5, 3.0);
  }
  return m.counts;
}

int dequant_ops_count(DequantPath path) { return dequant_op_counts(path).total(); }

Matrix dequantize_head(const KvPageStore& store, KvPart part, std::size_t head, KvReadPath path) {
  const KvConfig& cfg = store.config();
  const std::uint32_t mask = code_mask(cfg.kv_bits);
  Matrix out(store.tokens(), cfg.head_dim);
  kernels::F16Machine m;
  for (std::size_t t = 0; t < store.tokens(); ++t) {
    const KvParams p = store.params(part, t, head);
    const double scale = p.scale();
    const double zero = p.zero();
    const kernels::TrickConstants c = kernels::make_trick_constants(scale, zero);
    for (std::size_t d = 0; d < cfg.head_dim; ++d) {
      const std::uint32_t code = store.code(part, t, head, d);
      out(t, d) = path == KvReadPath::kTrick ? kernels::dequant_trick(m, code, mask, c)
                                             : (static_cast<double>(code) - zero) * scale;
    }
  }
  return out;
}

Matrix attention_exact(const Matrix& keys, const Matrix& values, const DecodeQuery& dq,
                       std::size_t head_dim, const SmoothScales* smooth) {
  require(keys.rows() > 0, ErrorKind::kEmptyCache, "attention: no cached tokens");
  require(keys.rows() == values.rows() && keys.cols() == values.cols(), ErrorKind::kShapeError,
          "attention: keys and values differ in shape");
  require(head_dim > 0 && keys.cols() % head_dim == 0, ErrorKind::kShapeError,
          "attention: width is not a multiple of head dim");
  const std::size_t kv_heads = keys.cols() / head_dim;
  require(dq.gqa_ratio >= 1 && dq.q.rows() == kv_heads * dq.gqa_ratio && dq.q.cols() == head_dim,
          ErrorKind::kShapeError, "attention: query must be (ratio * kv_heads) x head_dim");
  if (smooth) {
    require(smooth->head_dim == head_dim && smooth->kv_heads() == kv_heads, ErrorKind::kShapeError,
            "attention: smoothing shape differs from cache");
  }

  const std::size_t tokens = keys.rows();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Matrix out(dq.q.rows(), head_dim);
  std::vector<double> q(head_dim);
  std::vector<double> scores(tokens);
  for (std::size_t h = 0; h < dq.q.rows(); ++h) {
    const std::size_t kvh = h / dq.gqa_ratio;
    const std::size_t col0 = kvh * head_dim;
    for (std::size_t d = 0; d < head_dim; ++d)
      q[d] = dq.q(h, d) * (smooth ? smooth->lambda[col0 + d] : 1.0);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < tokens; ++t) {
      double acc = 0.0;
      for (std::size_t d = 0; d < head_dim; ++d) acc += q[d] * keys(t, col0 + d);
      scores[t] = acc * inv_sqrt_d;
      mx = std::max(mx, scores[t]);
    }
    double denom = 0.0;
    for (double& s : scores) {
      s = std::exp(s - mx);
      denom += s;
    }
    for (std::size_t t = 0; t < tokens; ++t) {
      const double p = scores[t] / denom;
      for (std::size_t d = 0; d < head_dim; ++d) out(h, d) += p * values(t, col0 + d);
    }
  }
  return out;
}

Matrix attention_decode(const KvPageStore& store, const DecodeQuery& dq, const SmoothScales* smooth,
                        KvReadPath path) {
  require(store.tokens() > 0, ErrorKind::kEmptyCache, "attention_decode: cache is empty");
  const KvConfig& cfg = store.config();
  Matrix keys(store.tokens(), cfg.kv_heads * cfg.head_dim);
  Matrix values(store.tokens(), cfg.kv_heads * cfg.head_dim);
  for (std::size_t h = 0; h < cfg.kv_heads; ++h) {
    const Matrix k = dequantize_head(store, KvPart::kKey, h, path);
    const Matrix v = dequantize_head(store, KvPart::kValue, h, path);
    for (std::size_t t = 0; t < store.tokens(); ++t)
      for (std::size_t d = 0; d < cfg.head_dim; ++d) {
        keys(t, h * cfg.head_dim + d) = k(t, d);
        values(t, h * cfg.head_dim + d) = v(t, d);
      }
  }
  return attention_exact(keys, values, dq, cfg.head_dim, smooth);
}

}  // namespace qtk
