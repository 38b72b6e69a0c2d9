// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>

#include "fixtures.hpp"
#include "qtk/block_io.hpp"
#include "qtk/container.hpp"
#include "qtk/error.hpp"
#include "qtk/int_exec.hpp"
#include "qtk/pipeline.hpp"

namespace qtk {
namespace {

TensorContainer sample() {
  TensorContainer c;
  c.set_meta("kind", "sample");
  c.set_meta("note", "spaces are fine");
  c.put_f64("a", Matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  c.put_f16("h", std::vector<double>{0.5, -2.0, 1024.0});
  c.put_u4("n", CodeMatrix(1, 5, {1, 15, 0, 7, 9}));
  c.put_u8("b", CodeMatrix(1, 2, {0, 255}));
  c.put_i8("s", Int8Matrix(1, 3, {-128, 0, 127}));
  return c;
}

TEST(Container, RoundTrip) {
  const TensorContainer c = sample();
  const auto bytes = c.serialize();
  const TensorContainer back = TensorContainer::deserialize(bytes);
  EXPECT_EQ(back, c);
  EXPECT_EQ(back.serialize(), bytes);
  EXPECT_EQ(back.get_matrix("a"), Matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(back.get_vector("h"), (std::vector<double>{0.5, -2.0, 1024.0}));
  EXPECT_EQ(back.get_codes("n"), CodeMatrix(1, 5, {1, 15, 0, 7, 9}));
  EXPECT_EQ(back.get_i8("s"), Int8Matrix(1, 3, {-128, 0, 127}));
  EXPECT_EQ(*back.meta("note"), "spaces are fine");
  EXPECT_FALSE(back.meta("missing").has_value());
  EXPECT_THROW(back.require_meta("missing"), Error);
}

TEST(Container, ByteLayout) {
  const auto bytes = sample().serialize();
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "QTZ1");
  const TensorContainer c = sample();
  for (const auto& rec : c.tensors()) {
    EXPECT_EQ(rec.bytes.size(), payload_bytes(rec.dtype, rec.rows * rec.cols));
  }
  EXPECT_EQ(payload_bytes(DType::kU4, 5), 3u);
  const TensorRecord& n = c.record("n");
  EXPECT_EQ(n.bytes[0], 0xF1);  // element 0 low nibble, element 1 high
  EXPECT_EQ(n.bytes[2], 0x09);
}

TEST(Container, RejectsBadPuts) {
  TensorContainer c;
  c.put_f64("x", Matrix(1, 1));
  EXPECT_THROW(c.put_f64("x", Matrix(1, 1)), Error);
  EXPECT_THROW(c.put_f16("h", std::vector<double>{0.1}), Error);  // not representable
  EXPECT_THROW(c.put_u4("n", CodeMatrix(1, 1, {16})), Error);
  EXPECT_THROW(c.put_raw({"r", DType::kF64, 1, 2, std::vector<std::uint8_t>(8)}), Error);
  EXPECT_THROW(c.record("nope"), Error);
  EXPECT_THROW(parse_dtype("f32"), Error);
  EXPECT_EQ(parse_dtype(to_string(DType::kI8)), DType::kI8);
}

TEST(Container, DetectsCorruption) {
  const auto good = sample().serialize();
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(TensorContainer::deserialize(bad_magic), Error);
  auto truncated = good;  // later tensors now point past the end
  truncated.resize(good.size() / 2);
  EXPECT_THROW(TensorContainer::deserialize(truncated), Error);
  auto huge_manifest = good;
  huge_manifest[11] = 0x7F;
  EXPECT_THROW(TensorContainer::deserialize(huge_manifest), Error);
  EXPECT_THROW(TensorContainer::deserialize(std::vector<std::uint8_t>(5)), Error);

  // Manifest edits: misaligned offset, and a length disagreeing with the shape.
  const std::string text(good.begin(), good.end());
  auto edit = [&](const std::string& from, const std::string& to) {
    std::string t = text;
    const auto pos = t.find(from);
    EXPECT_NE(pos, std::string::npos) << from;
    t.replace(pos, from.size(), to);
    return std::vector<std::uint8_t>(t.begin(), t.end());
  };
  EXPECT_THROW(TensorContainer::deserialize(edit("tensor a f64 2x3", "tensor a f64 3x3")), Error);
  EXPECT_THROW(TensorContainer::deserialize(edit("tensor a f64", "tensor a f65")), Error);
}

TEST(Container, SaveLoad) {
  const auto path = std::filesystem::temp_directory_path() / "qtk_container_test.qtz";
  sample().save(path);
  EXPECT_EQ(TensorContainer::load(path), sample());
  std::filesystem::remove(path);
  EXPECT_THROW(TensorContainer::load(path), Error);
}

TEST(Container, GoldenFixturesAreStable) {
  const std::filesystem::path dir = QTK_TEST_DATA_DIR;
  for (const auto& f : testing::make_golden_fixtures()) {
    EXPECT_EQ(f.bytes, testing::read_file(dir / f.file)) << f.file;
  }
  const auto tile = testing::read_file(dir / "tile_64x64.bin");
  EXPECT_EQ(tile.size(), 4 * kTileBytes);
}

TEST(BlockIo, ToyBlockRoundTrip) {
  const ToyBlock b = make_synthetic_block(BlockDims{}, 4);
  const ToyBlock back = block_from_container(TensorContainer::deserialize(block_to_container(b).serialize()));
  EXPECT_EQ(back.dims, b.dims);
  EXPECT_EQ(back.w_qkv, b.w_qkv);
  EXPECT_EQ(back.w_ffn2, b.w_ffn2);
  EXPECT_EQ(back.norm_ffn, b.norm_ffn);
  EXPECT_THROW(quantized_from_container(block_to_container(b)), Error);
}

TEST(BlockIo, QuantizedBlockRoundTrip) {
  const BlockDims dims;
  const ToyBlock b = make_synthetic_block(dims, 4);
  const Matrix xc = make_synthetic_inputs(32, dims.hidden, 1004);
  const Matrix xe = make_synthetic_inputs(16, dims.hidden, 2004);
  QuantRecipe per_channel = QuantRecipe::qoq(32);
  per_channel.weight_mode = WeightMode::kPerChannel;
  for (const QuantRecipe& r : {QuantRecipe::qoq(32), QuantRecipe::rtn(), per_channel, QuantRecipe::identity()}) {
    const QuantizedBlock qb = apply_qoq(b, r, xc);
    const auto bytes = quantized_to_container(qb).serialize();
    const QuantizedBlock back = quantized_from_container(TensorContainer::deserialize(bytes));
    EXPECT_EQ(back.forward(xe), qb.forward(xe)) << r.describe();
    EXPECT_EQ(quantized_to_container(back).serialize(), bytes);
  }
}

}  // namespace
}  // namespace qtk
