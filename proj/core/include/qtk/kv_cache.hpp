// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

// Paged low-bit KV cache with per-head, per-token dynamic asymmetric
// quantization.
//
// Page byte layout (frozen, little-endian), for P = page_size, D = head_dim,
// b = kv_bits and C = P * D * b / 8:
//   for each KV head h:
//     [K codes  : C bytes]      token-major; 4-bit codes pack dim 2i in the
//                               low nibble and dim 2i+1 in the high nibble
//     [K params : 4P bytes]     per token: scale f16 bits, zero f16 bits
//     [V codes  : C bytes]
//     [V params : 4P bytes]
// Slots past the current token count are zero.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "qtk/calib.hpp"
#include "qtk/half.hpp"
#include "qtk/matrix.hpp"

namespace qtk {

inline constexpr std::size_t kDefaultPageSize = 64;
inline constexpr std::uint16_t kHalf1024Bits = 0x6400;

struct KvConfig {
  std::size_t kv_heads = 1;
  std::size_t head_dim = 64;
  std::size_t page_size = kDefaultPageSize;
  int kv_bits = 4;

  void validate() const;
  std::size_t code_bytes() const { return page_size * head_dim * kv_bits / 8; }
  std::size_t head_stride() const { return 2 * (code_bytes() + 4 * page_size); }
  std::size_t page_bytes() const { return kv_heads * head_stride(); }
};

enum class KvPart { kKey, kValue };

struct KvParams {
  std::uint16_t scale_bits = 0;
  std::uint16_t zero_bits = 0;
  double scale() const { return f16_from_bits(scale_bits); }
  double zero() const { return f16_from_bits(zero_bits); }
};

class KvPageStore {
 public:
  explicit KvPageStore(KvConfig config);

  /// Quantizes one token (k, v are kv_heads x head_dim) and appends it,
  /// opening a new page when the current one is full.
  void append_token(const Matrix& k, const Matrix& v);

  const KvConfig& config() const { return config_; }
  std::size_t tokens() const { return tokens_; }
  std::size_t pages() const { return pages_.size(); }
  std::span<const std::uint8_t> page_bytes(std::size_t page) const { return pages_.at(page); }

  std::uint32_t code(KvPart part, std::size_t token, std::size_t head, std::size_t dim) const;
  KvParams params(KvPart part, std::size_t token, std::size_t head) const;

 private:
  std::size_t part_offset(KvPart part, std::size_t head) const;
  void write_row(std::vector<std::uint8_t>& page, KvPart part, std::size_t slot, std::size_t head,
                 std::span<const double> row);

  KvConfig config_;
  std::size_t tokens_ = 0;
  std::vector<std::vector<std::uint8_t>> pages_;
};

/// Ops per element of a dequantization path.
enum class DequantPath { kNaive, kTrick };

/// Counts of each operation class issued by one element's dequantization.
struct OpCounts {
  int logical = 0;
  int shift = 0;
  int convert = 0;
  int arith = 0;
  int fma = 0;
  int total() const { return logical + shift + convert + arith + fma; }
};

/// Splice the code into the mantissa of f16 1024.0 (one and/or), then one
/// fused multiply-add with the prefetched bias -(1024 + zero) * scale.
/// Result is rounded to f16.
double dequant_fp16_trick(std::uint32_t code, double scale_f16, double zero_f16);
/// Mask/shift, int->f16 convert, subtract zero, multiply scale, starting
/// from a packed word.
double dequant_naive(std::uint32_t packed, int shift, double scale_f16, double zero_f16);
/// Audited operation counts for a path (5 naive, 2 trick).
OpCounts dequant_op_counts(DequantPath path);
int dequant_ops_count(DequantPath path);

enum class KvReadPath { kTrick, kReference };

/// Dequantized keys or values for one head: tokens x head_dim.
Matrix dequantize_head(const KvPageStore& store, KvPart part, std::size_t head,
                       KvReadPath path = KvReadPath::kTrick);

struct DecodeQuery {
  Matrix q;                  // heads x head_dim, already position-embedded
  std::size_t gqa_ratio = 1;  // query heads per KV head
};

/// Softmax attention of each query head over its KV head's tokens.
/// keys / values are tokens x (kv_heads * head_dim). When smoothing is
/// given, each query row is multiplied by its KV head's lambda first.
Matrix attention_exact(const Matrix& keys, const Matrix& values, const DecodeQuery& dq,
                       std::size_t head_dim, const SmoothScales* smooth = nullptr);

/// Decode-step attention over the paged store. Throws EmptyCache.
Matrix attention_decode(const KvPageStore& store, const DecodeQuery& dq,
                        const SmoothScales* smooth = nullptr,
                        KvReadPath path = KvReadPath::kTrick);

}  // namespace qtk
