// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

// Bit-exact model of the W4A8 GEMM datapath: nibble packing, tile layout,
// four-lane (SWAR) dequantization and integer GEMM with epilogue scaling.
//
// Packed nibble layout (frozen, little-endian):
//   A row of 32 u4 weights w0..w31 occupies 16 bytes. Byte i (0..15) holds
//   w_i in its low nibble and w_{i+16} in its high nibble, so the nibble
//   stream reads w0, w16, w1, w17, ... . Word j (bytes 4j..4j+3) unpacks to
//   low lanes (w_{4j} .. w_{4j+3}) and high lanes (w_{4j+16} .. w_{4j+19}).
//
// Tile layout (frozen): a 32 x 32 tile (output channel n, input channel k)
//   is 512 bytes. Consumer t (0..31) owns bytes [16t, 16t + 16): four words,
//   word j covering output channel n = t/4 + 8j and input channels
//   4(t%4) + {0..3} (low lanes) and 16 + 4(t%4) + {0..3} (high lanes),
//   i.e. the operand fragment of an m16n8k32 int8 MMA, read as a single
//   128-bit transaction.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "qtk/matrix.hpp"
#include "qtk/progressive.hpp"
#include "qtk/quant_core.hpp"

namespace qtk {

/// A 32-bit word viewed as four independent 8-bit lanes (lane 0 = LSB).
struct LaneWord {
  std::uint32_t bits = 0;

  std::uint8_t lane(int i) const { return static_cast<std::uint8_t>(bits >> (8 * i)); }
  std::int8_t signed_lane(int i) const { return static_cast<std::int8_t>(lane(i)); }
  static LaneWord from_lanes(std::array<std::uint8_t, 4> lanes);
  static LaneWord broadcast(std::uint8_t v) { return {0x01010101u * v}; }

  friend bool operator==(LaneWord, LaneWord) = default;
};

struct UnpackedLanes {
  LaneWord low;
  LaneWord high;
};

inline constexpr std::uint32_t kLowNibbleMask = 0x0F0F0F0Fu;

/// The three-operation unpack, generic over the word type so the operation
/// count can be audited with an instrumented integer.
template <typename Word>
constexpr std::pair<Word, Word> unpack_rlp_ops(Word word) {
  const Word mask(kLowNibbleMask);
  return {word & mask, (word >> 4) & mask};
}

UnpackedLanes unpack_rlp(std::uint32_t word);

/// Packs 32 u4 codes into four words in interleaved order. Throws
/// InvalidInput on values outside [0, 15].
std::array<std::uint32_t, 4> pack_interleaved(std::span<const std::int32_t> codes);
std::array<std::int32_t, 32> unpack_interleaved(const std::array<std::uint32_t, 4>& words);

enum class LaneCheck { kUnchecked, kChecked };

/// Four-lane multiply by a u8 scale zero-extended to 32 bits: one ordinary
/// 32-bit multiply. Equals the per-lane product mod 256 only while no lane
/// product exceeds 255; otherwise carries spill into the next lane. Checked
/// mode throws LaneOverflow in that case.
LaneWord lane_mul(LaneWord word, std::uint8_t scale, LaneCheck check = LaneCheck::kChecked);

/// Per-lane subtraction mod 256 without borrows across lanes (vsub4).
LaneWord lane_sub(LaneWord a, LaneWord b);

/// Outcome of both dequantization orders for one (code, zero, scale) triple
/// replicated across all four lanes of a word.
struct OrderWitness {
  std::int32_t code = 0;
  std::int32_t zero = 0;
  std::int32_t scale = 0;
  std::int32_t truth = 0;
  std::array<std::int8_t, 4> subtract_first{};
  std::array<std::int8_t, 4> multiply_first{};

  bool subtract_first_ok() const;
  bool multiply_first_ok() const;
};

OrderWitness order_matters_demo(std::int32_t code, std::int32_t zero, std::int32_t scale);

struct LaneSweep {
  std::uint64_t cases = 0;               // code x zero x scale triples visited
  std::uint64_t admissible = 0;          // produced by the protective quantizer
  std::uint64_t in_int8 = 0;             // true value inside [-128, 127]
  std::uint64_t multiply_first_failures = 0;  // over in_int8 triples
  std::uint64_t subtract_first_failures = 0;  // over admissible triples
  std::optional<OrderWitness> witness;   // first admissible subtract-first failure
};

/// Exhaustive sweep over code, zero in [0, 15] and scale in [1, 16].
LaneSweep sweep_lanes();

inline constexpr std::size_t kTileDim = 32;
inline constexpr std::size_t kTileBytes = kTileDim * kTileDim / 2;
inline constexpr std::size_t kBytesPerConsumer = 16;

struct PackedTile {
  std::array<std::uint8_t, kTileBytes> bytes{};
  friend bool operator==(const PackedTile&, const PackedTile&) = default;
};

/// Consumer/word/lane coordinates of a tile element.
struct TileSlot {
  std::size_t consumer = 0;
  std::size_t word = 0;
  bool high = false;
  int lane = 0;
};
/// Where element (n, k) of a tile lives.
TileSlot tile_slot(std::size_t n, std::size_t k);

PackedTile reorder_tile(const CodeMatrix& tile);
CodeMatrix unreorder_tile(const PackedTile& tile);

struct ByteRange {
  std::size_t offset = 0;
  std::size_t length = 0;
};

struct TileRead {
  std::size_t consumer = 0;
  ByteRange range;
  std::array<std::uint32_t, 4> words{};
};

/// Reads issued when consumers 0..31 fetch their operands in compute order.
std::vector<TileRead> linear_consume(const PackedTile& tile);
/// Byte ranges the same consumer would need from a plain row-major packed
/// tile (16 bytes per output channel, nibble i = k).
std::vector<ByteRange> row_major_reads(std::size_t consumer);

/// All tiles of an n x k code matrix, tile (nt, kt) at index nt * (k/32) + kt.
struct PackedWeights {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<PackedTile> tiles;

  const PackedTile& tile(std::size_t nt, std::size_t kt) const { return tiles[nt * (k / kTileDim) + kt]; }
};

PackedWeights pack_weights(const CodeMatrix& codes);

/// Exact int32 accumulation of qx (m x k) times qw (k x n). Throws
/// AccumulatorOverflow when k > 2^16.
Int32Matrix gemm_int8(const Int8Matrix& qx, const Int8Matrix& qw);
inline constexpr std::size_t kMaxReductionDim = std::size_t{1} << 16;

struct TokenSums {
  std::vector<double> t_x;
};

TokenSums precompute_token_sums(const Matrix& x);

/// Signed-int8 view of the codes of a symmetric 8-bit activation tensor.
Int8Matrix activation_codes(const QuantizedTensor& qx);

/// Per-channel W4A8: O = (Qx Qw^T) * (s_x s_w^T) - t_x (z_w * s_w)^T.
/// qw holds u4 codes with one zero and scale per output channel (row).
Matrix gemm_w4a8_per_channel(const QuantizedTensor& qx, const QuantizedTensor& qw,
                             const TokenSums& t_x);

/// Dequantize-first reference: (Qx * s_x)((Qw - z_w) * s_w)^T.
Matrix gemm_w4a8_reference(const QuantizedTensor& qx, const QuantizedTensor& qw);

/// Signed int8 operands produced by the main loop: unpack, multiply by s1 and
/// subtract z * s1 in four-lane words, tile by tile. Result is n x k.
Int8Matrix dequant_stream(const ProgressiveWeight& pw, const PackedWeights& packed);

/// Per-group W4A8 through the simulated main loop, then the s_x s0^T epilogue.
Matrix gemm_w4a8_per_group(const QuantizedTensor& qx, const ProgressiveWeight& pw,
                           const PackedWeights& packed);

}  // namespace qtk
