// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qtk/int_exec.hpp"

#include <algorithm>
#include <string>

namespace qtk {
namespace {

constexpr std::int32_t kU4Max = 15;
constexpr std::int32_t kMaxLevel2Scale = 16;

std::uint32_t load_word(const PackedTile& tile, std::size_t offset) {
  return static_cast<std::uint32_t>(tile.bytes[offset]) |
         static_cast<std::uint32_t>(tile.bytes[offset + 1]) << 8 |
         static_cast<std::uint32_t>(tile.bytes[offset + 2]) << 16 |
         static_cast<std::uint32_t>(tile.bytes[offset + 3]) << 24;
}

void store_word(PackedTile& tile, std::size_t offset, std::uint32_t w) {
  for (int b = 0; b < 4; ++b) tile.bytes[offset + b] = static_cast<std::uint8_t>(w >> (8 * b));
}

void check_nibble(std::int32_t v) {
  require(v >= 0 && v <= kU4Max, ErrorKind::kInvalidInput,
          "value " + std::to_string(v) + " does not fit a nibble");
}

// Level-1 operand for one packed word: unpack, scale, subtract z * s.
UnpackedLanes dequant_word(std::uint32_t word, std::int32_t scale, std::int32_t zero) {
  const UnpackedLanes u = unpack_rlp(word);
  const auto s = static_cast<std::uint8_t>(scale);
  const LaneWord zs = LaneWord::broadcast(static_cast<std::uint8_t>(zero * scale));
  return {lane_sub(lane_mul(u.low, s), zs), lane_sub(lane_mul(u.high, s), zs)};
}

}  // namespace

LaneWord LaneWord::from_lanes(std::array<std::uint8_t, 4> lanes) {
  return {static_cast<std::uint32_t>(lanes[0]) | static_cast<std::uint32_t>(lanes[1]) << 8 |
          static_cast<std::uint32_t>(lanes[2]) << 16 | static_cast<std::uint32_t>(lanes[3]) << 24};
}

UnpackedLanes unpack_rlp(std::uint32_t word) {
  const auto [low, high] = unpack_rlp_ops(word);
  return {{low}, {high}};
}

std::array<std::uint32_t, 4> pack_interleaved(std::span<const std::int32_t> codes) {
  require(codes.size() == 32, ErrorKind::kShapeError, "pack_interleaved: expects 32 values");
  std::array<std::uint32_t, 4> words{};
  for (std::size_t i = 0; i < 16; ++i) {
    check_nibble(codes[i]);
    check_nibble(codes[i + 16]);
    const auto byte = static_cast<std::uint32_t>(codes[i] | codes[i + 16] << 4);
    words[i / 4] |= byte << (8 * (i % 4));
  }
  return words;
}

std::array<std::int32_t, 32> unpack_interleaved(const std::array<std::uint32_t, 4>& words) {
  std::array<std::int32_t, 32> out{};
  for (std::size_t j = 0; j < 4; ++j) {
    const UnpackedLanes u = unpack_rlp(words[j]);
    for (int b = 0; b < 4; ++b) {
      out[4 * j + b] = u.low.lane(b);
      out[4 * j + b + 16] = u.high.lane(b);
    }
  }
  return out;
}

LaneWord lane_mul(LaneWord word, std::uint8_t scale, LaneCheck check) {
  if (check == LaneCheck::kChecked) {
    for (int i = 0; i < 4; ++i) {
      if (static_cast<std::uint32_t>(word.lane(i)) * scale > 0xFF) {
        fail(ErrorKind::kLaneOverflow, "lane " + std::to_string(i) + " product " +
                                           std::to_string(word.lane(i) * scale) +
                                           " exceeds 8 bits");
      }
    }
  }
  return {word.bits * static_cast<std::uint32_t>(scale)};
}

LaneWord lane_sub(LaneWord a, LaneWord b) {
  constexpr std::uint32_t kHigh = 0x80808080u;
  return {((a.bits | kHigh) - (b.bits & ~kHigh)) ^ ((a.bits ^ ~b.bits) & kHigh)};
}

bool OrderWitness::subtract_first_ok() const {
  return std::all_of(subtract_first.begin(), subtract_first.end(),
                     [&](std::int8_t v) { return v == truth; });
}

bool OrderWitness::multiply_first_ok() const {
  return std::all_of(multiply_first.begin(), multiply_first.end(),
                     [&](std::int8_t v) { return v == truth; });
}

OrderWitness order_matters_demo(std::int32_t code, std::int32_t zero, std::int32_t scale) {
  check_nibble(code);
  check_nibble(zero);
  require(scale >= 1 && scale <= 255, ErrorKind::kInvalidInput, "scale must be a u8 >= 1");
  OrderWitness w{code, zero, scale, (code - zero) * scale, {}, {}};
  const LaneWord codes = LaneWord::broadcast(static_cast<std::uint8_t>(code));
  const auto s = static_cast<std::uint8_t>(scale);

  const LaneWord diff = lane_sub(codes, LaneWord::broadcast(static_cast<std::uint8_t>(zero)));
  const LaneWord sub_first = lane_mul(diff, s, LaneCheck::kUnchecked);
  const LaneWord mul_first =
      lane_sub(lane_mul(codes, s, LaneCheck::kUnchecked),
               LaneWord::broadcast(static_cast<std::uint8_t>(zero * scale)));
  for (int i = 0; i < 4; ++i) {
    w.subtract_first[i] = sub_first.signed_lane(i);
    w.multiply_first[i] = mul_first.signed_lane(i);
  }
  return w;
}

LaneSweep sweep_lanes() {
  // Triples the protective level-2 quantizer can emit.
  const auto [lo_bound, hi_bound] = protective_range(8, 4);
  std::array<bool, 16 * 16 * (kMaxLevel2Scale + 1)> admissible{};
  auto index = [](std::int32_t c, std::int32_t z, std::int32_t s) {
    return static_cast<std::size_t>((s * 16 + z) * 16 + c);
  };
  for (std::int32_t a = lo_bound; a <= hi_bound; ++a)
    for (std::int32_t b = a; b <= hi_bound; ++b) {
      const std::int32_t s = level2_scale(a, b);
      const std::int32_t z = level2_zero(a, s);
      for (std::int32_t c = level2_code(a, s, z); c <= level2_code(b, s, z); ++c)
        admissible[index(c, z, s)] = true;
    }

  LaneSweep out;
  for (std::int32_t s = 1; s <= kMaxLevel2Scale; ++s)
    for (std::int32_t z = 0; z <= kU4Max; ++z)
      for (std::int32_t c = 0; c <= kU4Max; ++c) {
        ++out.cases;
        const OrderWitness w = order_matters_demo(c, z, s);
        if (w.truth >= -128 && w.truth <= 127) {
          ++out.in_int8;
          if (!w.multiply_first_ok()) ++out.multiply_first_failures;
        }
        if (!admissible[index(c, z, s)]) continue;
        ++out.admissible;
        if (!w.subtract_first_ok()) {
          ++out.subtract_first_failures;
          if (!out.witness) out.witness = w;
        }
      }
  return out;
}

TileSlot tile_slot(std::size_t n, std::size_t k) {
  TileSlot slot;
  slot.consumer = (n % 8) * 4 + (k % 16) / 4;
  slot.word = n / 8;
  slot.high = k >= 16;
  slot.lane = static_cast<int>(k % 4);
  return slot;
}

PackedTile reorder_tile(const CodeMatrix& tile) {
  require(tile.rows() == kTileDim && tile.cols() == kTileDim, ErrorKind::kShapeError,
          "reorder_tile: expects a 32 x 32 tile");
  PackedTile out;
  for (std::size_t t = 0; t < kTileDim; ++t) {
    const std::size_t k0 = 4 * (t % 4);
    for (std::size_t j = 0; j < 4; ++j) {
      const std::size_t n = t / 4 + 8 * j;
      std::uint32_t word = 0;
      for (std::size_t b = 0; b < 4; ++b) {
        const std::int32_t lo = tile(n, k0 + b);
        const std::int32_t hi = tile(n, k0 + b + 16);
        check_nibble(lo);
        check_nibble(hi);
        word |= static_cast<std::uint32_t>(lo | hi << 4) << (8 * b);
      }
      store_word(out, t * kBytesPerConsumer + 4 * j, word);
    }
  }
  return out;
}

CodeMatrix unreorder_tile(const PackedTile& tile) {
  CodeMatrix out(kTileDim, kTileDim);
  for (std::size_t n = 0; n < kTileDim; ++n)
    for (std::size_t k = 0; k < kTileDim; ++k) {
      const TileSlot s = tile_slot(n, k);
      const UnpackedLanes u = unpack_rlp(load_word(tile, s.consumer * kBytesPerConsumer + 4 * s.word));
      out(n, k) = (s.high ? u.high : u.low).lane(s.lane);
    }
  return out;
}

std::vector<TileRead> linear_consume(const PackedTile& tile) {
  std::vector<TileRead> reads;
  reads.reserve(kTileDim);
  for (std::size_t t = 0; t < kTileDim; ++t) {
    TileRead r;
    r.consumer = t;
    r.range = {t * kBytesPerConsumer, kBytesPerConsumer};
    for (std::size_t j = 0; j < 4; ++j) r.words[j] = load_word(tile, r.range.offset + 4 * j);
    reads.push_back(r);
  }
  return reads;
}

std::vector<ByteRange> row_major_reads(std::size_t consumer) {
  require(consumer < kTileDim, ErrorKind::kInvalidInput, "row_major_reads: consumer out of range");
  std::vector<ByteRange> ranges;
  const std::size_t k0 = 4 * (consumer % 4);
  for (std::size_t j = 0; j < 4; ++j) {
    const std::size_t n = consumer / 4 + 8 * j;
    // Four consecutive nibbles are two bytes; the +16 run is eight bytes later.
    ranges.push_back({n * 16 + k0 / 2, 2});
    ranges.push_back({n * 16 + (k0 + 16) / 2, 2});
  }
  return ranges;
}

PackedWeights pack_weights(const CodeMatrix& codes) {
  require(codes.rows() % kTileDim == 0 && codes.cols() % kTileDim == 0, ErrorKind::kShapeError,
          "pack_weights: n and k must be multiples of 32");
  PackedWeights pw{codes.rows(), codes.cols(), {}};
  CodeMatrix tile(kTileDim, kTileDim);
  for (std::size_t nt = 0; nt < codes.rows() / kTileDim; ++nt)
    for (std::size_t kt = 0; kt < codes.cols() / kTileDim; ++kt) {
      for (std::size_t n = 0; n < kTileDim; ++n)
        for (std::size_t k = 0; k < kTileDim; ++k)
          tile(n, k) = codes(nt * kTileDim + n, kt * kTileDim + k);
      pw.tiles.push_back(reorder_tile(tile));
    }
  return pw;
}

Int32Matrix gemm_int8(const Int8Matrix& qx, const Int8Matrix& qw) {
  require(qx.cols() == qw.rows(), ErrorKind::kShapeError, "gemm_int8: inner dimensions differ");
  require(qx.cols() <= kMaxReductionDim, ErrorKind::kAccumulatorOverflow,
          "gemm_int8: k exceeds the int32 accumulator headroom");
  Int32Matrix out(qx.rows(), qw.cols());
  for (std::size_t i = 0; i < qx.rows(); ++i)
    for (std::size_t j = 0; j < qw.cols(); ++j) {
      std::int32_t acc = 0;
      for (std::size_t k = 0; k < qx.cols(); ++k)
        acc += static_cast<std::int32_t>(qx(i, k)) * static_cast<std::int32_t>(qw(k, j));
      out(i, j) = acc;
    }
  return out;
}

TokenSums precompute_token_sums(const Matrix& x) {
  TokenSums t;
  t.t_x.resize(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double acc = 0.0;
    for (double v : x.row(r)) acc += v;
    t.t_x[r] = acc;
  }
  return t;
}

Int8Matrix activation_codes(const QuantizedTensor& qx) {
  require(qx.spec.symmetric && qx.spec.bits == 8, ErrorKind::kInvalidInput,
          "activation codes must be symmetric 8-bit");
  Int8Matrix out(qx.rows(), qx.cols());
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = static_cast<std::int8_t>(qx.codes.data()[i]);
  return out;
}

namespace {

void check_activation(const QuantizedTensor& qx) {
  require(qx.spec.symmetric && qx.spec.bits == 8 &&
              qx.spec.granularity.kind == Granularity::Kind::kPerChannel,
          ErrorKind::kInvalidInput, "activations must be per-token symmetric int8");
}

}  // namespace

Matrix gemm_w4a8_per_channel(const QuantizedTensor& qx, const QuantizedTensor& qw,
                             const TokenSums& t_x) {
  check_activation(qx);
  require(!qw.spec.symmetric && qw.spec.bits == 4 &&
              qw.spec.granularity.kind == Granularity::Kind::kPerChannel,
          ErrorKind::kInvalidInput, "weights must be per-channel asymmetric u4");
  require(qx.cols() == qw.cols(), ErrorKind::kShapeError, "gemm_w4a8_per_channel: k differs");
  require(t_x.t_x.size() == qx.rows(), ErrorKind::kShapeError,
          "gemm_w4a8_per_channel: token sums length differs from m");

  Int8Matrix wt(qw.cols(), qw.rows());
  for (std::size_t n = 0; n < qw.rows(); ++n)
    for (std::size_t k = 0; k < qw.cols(); ++k) wt(k, n) = static_cast<std::int8_t>(qw.codes(n, k));
  const Int32Matrix acc = gemm_int8(activation_codes(qx), wt);

  Matrix out(qx.rows(), qw.rows());
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j)
      out(i, j) = acc(i, j) * (qx.scales[i] * qw.scales[j]) -
                  t_x.t_x[i] * (qw.zeros[j] * qw.scales[j]);
  return out;
}

Matrix gemm_w4a8_reference(const QuantizedTensor& qx, const QuantizedTensor& qw) {
  return matmul_nt(dequantize(qx), dequantize(qw));
}

Int8Matrix dequant_stream(const ProgressiveWeight& pw, const PackedWeights& packed) {
  require(packed.n == pw.n && packed.k == pw.k, ErrorKind::kShapeError,
          "dequant_stream: packed shape differs from weight");
  require(pw.group_size % kTileDim == 0, ErrorKind::kShapeError,
          "dequant_stream: group size must be a multiple of 32");
  Int8Matrix out(pw.n, pw.k);
  for (std::size_t nt = 0; nt < pw.n / kTileDim; ++nt)
    for (std::size_t kt = 0; kt < pw.k / kTileDim; ++kt) {
      const std::size_t k_base = kt * kTileDim;
      for (const TileRead& read : linear_consume(packed.tile(nt, kt))) {
        const std::size_t t = read.consumer;
        for (std::size_t j = 0; j < 4; ++j) {
          const std::size_t n = nt * kTileDim + t / 4 + 8 * j;
          const std::size_t k_low = k_base + 4 * (t % 4);
          const UnpackedLanes v =
              dequant_word(read.words[j], pw.scale_l2_at(n, k_low), pw.zero_at(n, k_low));
          for (int b = 0; b < 4; ++b) {
            out(n, k_low + b) = v.low.signed_lane(b);
            out(n, k_low + 16 + b) = v.high.signed_lane(b);
          }
        }
      }
    }
  return out;
}

Matrix gemm_w4a8_per_group(const QuantizedTensor& qx, const ProgressiveWeight& pw,
                           const PackedWeights& packed) {
  check_activation(qx);
  require(qx.cols() == pw.k, ErrorKind::kShapeError, "gemm_w4a8_per_group: k differs");
  require(pw.k % kTileDim == 0 && pw.k % pw.group_size == 0, ErrorKind::kShapeError,
          "gemm_w4a8_per_group: k must be a multiple of 32 and of g");
  const Int8Matrix stream = dequant_stream(pw, packed);
  Int8Matrix wt(pw.k, pw.n);
  for (std::size_t n = 0; n < pw.n; ++n)
    for (std::size_t k = 0; k < pw.k; ++k) wt(k, n) = stream(n, k);
  const Int32Matrix acc = gemm_int8(activation_codes(qx), wt);

  Matrix out(qx.rows(), pw.n);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j)
      out(i, j) = acc(i, j) * (qx.scales[i] * pw.scales_l1[j]);
  return out;
}

}  // namespace qtk
