// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#include "fixtures.hpp"

#include <fstream>
#include <random>

#include "qtk/container.hpp"
#include "qtk/error.hpp"
#include "qtk/int_exec.hpp"
#include "qtk/kv_cache.hpp"

namespace qtk::testing {
namespace {

// Uniform in [lo, hi) from the top 53 bits; no library distribution involved.
double unit(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

CodeMatrix random_codes(std::mt19937_64& rng, std::size_t rows, std::size_t cols, int max) {
  CodeMatrix m(rows, cols);
  for (auto& v : m.data()) v = static_cast<std::int32_t>(rng() % static_cast<std::uint64_t>(max + 1));
  return m;
}

std::vector<std::uint8_t> tile_fixture() {
  std::mt19937_64 rng(0x7111e);
  const PackedWeights pw = pack_weights(random_codes(rng, 64, 64, 15));
  std::vector<std::uint8_t> out;
  for (const PackedTile& t : pw.tiles) out.insert(out.end(), t.bytes.begin(), t.bytes.end());
  return out;
}

std::vector<std::uint8_t> kv_page_fixture() {
  std::mt19937_64 rng(0x6b7);
  KvPageStore store(KvConfig{2, 16, 8, 4});
  for (int t = 0; t < 11; ++t) {
    Matrix k(2, 16), v(2, 16);
    for (double& x : k.data()) x = unit(rng, -4.0, 4.0);
    for (double& x : v.data()) x = unit(rng, -1.0, 3.0);
    store.append_token(k, v);
  }
  std::vector<std::uint8_t> out;
  for (std::size_t p = 0; p < store.pages(); ++p) {
    const auto bytes = store.page_bytes(p);
    out.insert(out.end(), bytes.begin(), bytes.end());
  }
  return out;
}

std::vector<std::uint8_t> container_fixture() {
  std::mt19937_64 rng(0xc0de);
  TensorContainer c;
  c.set_meta("kind", "fixture");
  c.set_meta("note", "every dtype, odd u4 length");
  Matrix f(3, 5);
  for (double& x : f.data()) x = unit(rng, -10.0, 10.0);
  c.put_f64("dense", f);
  Matrix h(2, 3);
  for (double& x : h.data()) x = static_cast<double>(static_cast<int>(rng() % 2001) - 1000) / 64.0;
  c.put_f16("half", h);
  c.put_u8("bytes", random_codes(rng, 4, 4, 255));
  c.put_u4("nibbles", random_codes(rng, 3, 7, 15));
  Int8Matrix s(2, 9);
  for (auto& x : s.data()) x = static_cast<std::int8_t>(static_cast<int>(rng() % 256) - 128);
  c.put_i8("signed", s);
  return c.serialize();
}

}  // namespace

std::vector<Fixture> make_golden_fixtures() {
  return {{"tile_64x64.bin", tile_fixture()},
          {"kv_pages.bin", kv_page_fixture()},
          {"container.qtz", container_fixture()}};
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::kIoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace qtk::testing
