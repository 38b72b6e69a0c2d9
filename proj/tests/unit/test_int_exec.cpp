// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <boost/multiprecision/cpp_int.hpp>

#include <random>
#include <set>

#include "qtk/error.hpp"
#include "qtk/int_exec.hpp"
#include "qtk/progressive.hpp"
#include "qtk/quant_core.hpp"

namespace qtk {
namespace {

using Rational = boost::multiprecision::cpp_rational;

CodeMatrix random_codes(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  CodeMatrix m(r, c);
  for (auto& v : m.data()) v = static_cast<std::int32_t>(rng() & 0xF);
  return m;
}

Matrix gaussian(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (double& v : m.data()) v = n(rng);
  return m;
}

TEST(IntExec, UnpackSplitsNibbles) {
  const UnpackedLanes u = unpack_rlp(0x87654321u);
  EXPECT_EQ(u.low.bits, 0x07050301u);
  EXPECT_EQ(u.high.bits, 0x08060402u);
}

TEST(IntExec, InterleavedPackingRoundTrips) {
  std::mt19937_64 rng(1);
  std::vector<std::int32_t> codes(32);
  for (auto& c : codes) c = static_cast<std::int32_t>(rng() & 0xF);
  const auto words = pack_interleaved(codes);
  const auto back = unpack_interleaved(words);
  EXPECT_TRUE(std::equal(back.begin(), back.end(), codes.begin()));
  // Word j unpacks to w_{4j..4j+3} (low lanes) and w_{4j+16..} (high lanes).
  for (int j = 0; j < 4; ++j) {
    const UnpackedLanes u = unpack_rlp(words[j]);
    for (int i = 0; i < 4; ++i) {
      EXPECT_EQ(u.low.lane(i), codes[4 * j + i]);
      EXPECT_EQ(u.high.lane(i), codes[4 * j + 16 + i]);
    }
  }
  codes[3] = 16;
  EXPECT_THROW(pack_interleaved(codes), Error);
}

TEST(IntExec, LaneMultiplyDetectsCarries) {
  const LaneWord w = LaneWord::from_lanes({15, 2, 0, 7});
  EXPECT_EQ(lane_mul(w, 16), LaneWord::from_lanes({240, 32, 0, 112}));
  EXPECT_THROW(lane_mul(LaneWord::broadcast(16), 16), Error);
  EXPECT_NE(lane_mul(LaneWord::broadcast(16), 16, LaneCheck::kUnchecked),
            LaneWord::broadcast(0));
}

TEST(IntExec, LaneSubtractHasNoBorrow) {
  const LaneWord a = LaneWord::from_lanes({0, 5, 200, 255});
  const LaneWord b = LaneWord::from_lanes({1, 5, 100, 0});
  EXPECT_EQ(lane_sub(a, b), LaneWord::from_lanes({255, 0, 100, 255}));
}

TEST(IntExec, OrderWitness) {
  const OrderWitness w = order_matters_demo(0, 1, 2);
  EXPECT_EQ(w.truth, -2);
  EXPECT_TRUE(w.multiply_first_ok());
  const LaneSweep sw = sweep_lanes();
  EXPECT_EQ(sw.cases, 4096u);
  EXPECT_EQ(sw.multiply_first_failures, 0u);
  EXPECT_GT(sw.subtract_first_failures, 0u);
  ASSERT_TRUE(sw.witness.has_value());
  EXPECT_FALSE(sw.witness->subtract_first_ok());
}

TEST(IntExec, TileSlotIsABijection) {
  std::set<std::tuple<std::size_t, std::size_t, bool, int>> seen;
  for (std::size_t n = 0; n < 32; ++n)
    for (std::size_t k = 0; k < 32; ++k) {
      const TileSlot s = tile_slot(n, k);
      ASSERT_LT(s.consumer, 32u);
      ASSERT_LT(s.word, 4u);
      seen.insert({s.consumer, s.word, s.high, s.lane});
    }
  EXPECT_EQ(seen.size(), 1024u);
  const TileSlot s = tile_slot(9, 21);
  EXPECT_EQ(s.consumer, (9u % 8) * 4 + (21u % 16) / 4);
  EXPECT_EQ(s.word, 1u);
  EXPECT_TRUE(s.high);
  EXPECT_EQ(s.lane, 1);
}

TEST(IntExec, TileReorderRoundTripsAndReadsAreSequential) {
  std::mt19937_64 rng(2);
  const CodeMatrix tile = random_codes(rng, 32, 32);
  const PackedTile packed = reorder_tile(tile);
  EXPECT_EQ(unreorder_tile(packed), tile);
  const auto reads = linear_consume(packed);
  ASSERT_EQ(reads.size(), 32u);
  for (std::size_t t = 0; t < 32; ++t) {
    EXPECT_EQ(reads[t].range.offset, 16 * t);
    EXPECT_EQ(reads[t].range.length, 16u);
    for (std::size_t j = 0; j < 4; ++j) {
      const UnpackedLanes u = unpack_rlp(reads[t].words[j]);
      for (int i = 0; i < 4; ++i) {
        ASSERT_EQ(u.low.lane(i), tile(t / 4 + 8 * j, 4 * (t % 4) + i));
        ASSERT_EQ(u.high.lane(i), tile(t / 4 + 8 * j, 16 + 4 * (t % 4) + i));
      }
    }
  }
  // The plain layout needs several scattered reads for the same operands.
  EXPECT_GT(row_major_reads(0).size(), 1u);
}

TEST(IntExec, PackWeightsTilesInOrder) {
  std::mt19937_64 rng(3);
  const CodeMatrix codes = random_codes(rng, 64, 96);
  const PackedWeights pw = pack_weights(codes);
  ASSERT_EQ(pw.tiles.size(), 6u);
  CodeMatrix sub(32, 32);
  for (std::size_t n = 0; n < 32; ++n)
    for (std::size_t k = 0; k < 32; ++k) sub(n, k) = codes(32 + n, 64 + k);
  EXPECT_EQ(unreorder_tile(pw.tile(1, 2)), sub);
  EXPECT_THROW(pack_weights(CodeMatrix(30, 32)), Error);
}

TEST(IntExec, Int8GemmIsExact) {
  std::mt19937_64 rng(4);
  Int8Matrix a(3, 40), b(40, 5);
  for (auto& v : a.data()) v = static_cast<std::int8_t>(rng());
  for (auto& v : b.data()) v = static_cast<std::int8_t>(rng());
  const Int32Matrix c = gemm_int8(a, b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      boost::multiprecision::cpp_int acc = 0;
      for (std::size_t k = 0; k < 40; ++k) acc += static_cast<int>(a(i, k)) * static_cast<int>(b(k, j));
      EXPECT_EQ(acc, c(i, j));
    }
  EXPECT_THROW(gemm_int8(Int8Matrix(1, kMaxReductionDim + 1), Int8Matrix(kMaxReductionDim + 1, 1)),
               Error);
}

TEST(IntExec, PerChannelFusedMatchesExactRational) {
  std::mt19937_64 rng(5);
  const auto act = QuantSpec::symmetric_signed(8, Granularity::per_channel());
  const auto wsp = QuantSpec::asymmetric_unsigned(4, Granularity::per_channel());
  for (int trial = 0; trial < 20; ++trial) {
    const QuantizedTensor qx = quantize(gaussian(rng, 3, 24), act);
    const QuantizedTensor qw = quantize(gaussian(rng, 5, 24), wsp, {ScaleStorage::kF16, 1.0});
    const Matrix fused = gemm_w4a8_per_channel(qx, qw, precompute_token_sums(dequantize(qx)));
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        Rational ref = 0;
        for (std::size_t k = 0; k < 24; ++k)
          ref += Rational(qx.scales[i]) * qx.codes(i, k) * Rational(qw.scales[j]) *
                 (qw.codes(j, k) - qw.zeros[j]);
        const double r = ref.convert_to<double>();
        ASSERT_NEAR(fused(i, j), r, 1e-12 * std::max(1.0, std::abs(r)));
      }
  }
}

TEST(IntExec, PerGroupStreamMatchesLevel1) {
  std::mt19937_64 rng(6);
  for (std::size_t g : {32u, 64u, 128u}) {
    const ProgressiveWeight pw = quantize_progressive(gaussian(rng, 64, 256), g);
    const PackedWeights packed = pack_weights(pw.codes);
    EXPECT_EQ(dequant_stream(pw, packed), dequantize_level1(pw));
    const QuantizedTensor qx =
        quantize(gaussian(rng, 4, 256), QuantSpec::symmetric_signed(8, Granularity::per_channel()));
    const Matrix got = gemm_w4a8_per_group(qx, pw, packed);
    EXPECT_LE(relative_frobenius_error(got, matmul_nt(dequantize(qx), dequantize_full(pw))), 1e-12);
  }
}

TEST(IntExec, RejectsWrongOperandKinds) {
  std::mt19937_64 rng(7);
  const QuantizedTensor asym =
      quantize(gaussian(rng, 2, 8), QuantSpec::asymmetric_unsigned(8, Granularity::per_channel()));
  const QuantizedTensor qw =
      quantize(gaussian(rng, 2, 8), QuantSpec::asymmetric_unsigned(4, Granularity::per_channel()));
  EXPECT_THROW(gemm_w4a8_per_channel(asym, qw, precompute_token_sums(dequantize(asym))), Error);
}

}  // namespace
}  // namespace qtk
