// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

// Host-side cost of the simulated datapaths. These numbers say nothing
// about GPU throughput; they only track regressions in the models.

#include <benchmark/benchmark.h>

#include <random>

#include "qtk/int_exec.hpp"
#include "qtk/kv_cache.hpp"
#include "qtk/pipeline.hpp"
#include "qtk/progressive.hpp"
#include "qtk/quant_core.hpp"

namespace {

using namespace qtk;

Matrix gaussian(std::uint64_t seed, std::size_t r, std::size_t c) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (double& v : m.data()) v = n(rng);
  return m;
}

void BM_UnpackRlp(benchmark::State& state) {
  std::mt19937 rng(1);
  std::vector<std::uint32_t> words(4096);
  for (auto& w : words) w = rng();
  for (auto _ : state) {
    std::uint32_t acc = 0;
    for (std::uint32_t w : words) {
      const UnpackedLanes u = unpack_rlp(w);
      acc ^= u.low.bits + u.high.bits;
    }
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(words.size()));
}
BENCHMARK(BM_UnpackRlp);

void BM_ReorderTile(benchmark::State& state) {
  CodeMatrix tile(32, 32);
  for (std::size_t i = 0; i < tile.size(); ++i) tile.data()[i] = static_cast<std::int32_t>(i % 16);
  for (auto _ : state) benchmark::DoNotOptimize(reorder_tile(tile));
}
BENCHMARK(BM_ReorderTile);

void BM_QuantizeProgressive(benchmark::State& state) {
  const Matrix w = gaussian(2, 256, 256);
  for (auto _ : state) benchmark::DoNotOptimize(quantize_progressive(w, 128));
}
BENCHMARK(BM_QuantizeProgressive);

void BM_GemmW4A8PerChannel(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const QuantizedTensor qx =
      quantize(gaussian(3, m, 256), QuantSpec::symmetric_signed(8, Granularity::per_channel()));
  const QuantizedTensor qw = quantize(gaussian(4, 256, 256),
                                      QuantSpec::asymmetric_unsigned(4, Granularity::per_channel()),
                                      {ScaleStorage::kF16, 1.0});
  const TokenSums t = precompute_token_sums(dequantize(qx));
  for (auto _ : state) benchmark::DoNotOptimize(gemm_w4a8_per_channel(qx, qw, t));
}
BENCHMARK(BM_GemmW4A8PerChannel)->Arg(1)->Arg(16);

void BM_GemmW4A8PerGroup(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const QuantizedTensor qx =
      quantize(gaussian(5, m, 256), QuantSpec::symmetric_signed(8, Granularity::per_channel()));
  const ProgressiveWeight pw = quantize_progressive(gaussian(6, 256, 256), 128);
  const PackedWeights packed = pack_weights(pw.codes);
  for (auto _ : state) benchmark::DoNotOptimize(gemm_w4a8_per_group(qx, pw, packed));
}
BENCHMARK(BM_GemmW4A8PerGroup)->Arg(1)->Arg(16);

void BM_KvDequant(benchmark::State& state) {
  const auto path = state.range(0) == 0 ? KvReadPath::kTrick : KvReadPath::kReference;
  KvPageStore store(KvConfig{1, 64, 64, 4});
  std::mt19937_64 rng(7);
  for (int t = 0; t < 256; ++t) {
    const Matrix k = gaussian(rng(), 1, 64), v = gaussian(rng(), 1, 64);
    store.append_token(k, v);
  }
  for (auto _ : state) benchmark::DoNotOptimize(dequantize_head(store, KvPart::kKey, 0, path));
  state.SetItemsProcessed(state.iterations() * 256 * 64);
  state.SetLabel(path == KvReadPath::kTrick ? "trick" : "reference");
}
BENCHMARK(BM_KvDequant)->Arg(0)->Arg(1);

void BM_ApplyQoq(benchmark::State& state) {
  const BlockDims dims;
  const ToyBlock block = make_synthetic_block(dims, 1);
  const Matrix x = make_synthetic_inputs(64, dims.hidden, 1001);
  for (auto _ : state) benchmark::DoNotOptimize(apply_qoq(block, QuantRecipe::qoq(32), x));
}
BENCHMARK(BM_ApplyQoq)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
