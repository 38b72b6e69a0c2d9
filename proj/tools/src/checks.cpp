// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

// User-facing self-tests: each suite reruns a module's exhaustive or
// randomized property check and reports a one-line summary.

#include <cmath>
#include <random>
#include <sstream>

#include "qtk/error.hpp"
#include "qtk/int_exec.hpp"
#include "qtk/kv_cache.hpp"
#include "qtk/progressive.hpp"
#include "qtk_cli/cli.hpp"

namespace qtk::cli {
namespace {

CheckResult check_protective() {
  const auto [lo, hi] = protective_range(8, 4);
  const ProtectiveSweep safe = sweep_protective_range(hi);
  const ProtectiveSweep wide = sweep_protective_range(127);
  std::ostringstream s;
  s << "protective range [" << lo << ", " << hi << "]: " << safe.cases << " cases, "
    << safe.violations << " violations; [-127, 127]: " << wide.violations << " violations";
  if (wide.first_violation) {
    const auto& v = *wide.first_violation;
    s << " (first: group [" << v[0] << ", " << v[1] << "], code " << v[2] << ")";
  }
  return {safe.violations == 0 && wide.violations > 0, s.str()};
}

CheckResult check_lanes() {
  const LaneSweep sw = sweep_lanes();
  std::ostringstream s;
  s << sw.cases << " triples, " << sw.admissible << " admissible, multiply-first failures "
    << sw.multiply_first_failures << ", subtract-first failures " << sw.subtract_first_failures;
  if (sw.witness)
    s << " (witness: code " << sw.witness->code << ", zero " << sw.witness->zero << ", scale "
      << sw.witness->scale << ", truth " << sw.witness->truth << ")";
  return {sw.multiply_first_failures == 0 && sw.witness.has_value(), s.str()};
}

CheckResult check_gemm(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto random = [&](std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (double& v : m.data()) v = normal(rng);
    return m;
  };
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  const QuantSpec act = QuantSpec::symmetric_signed(8, Granularity::per_channel());
  const QuantSpec wspec = QuantSpec::asymmetric_unsigned(4, Granularity::per_channel());

  double worst_channel = 0.0, worst_group = 0.0;
  std::size_t stream_mismatch = 0;
  constexpr int kInstances = 200;
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t m = pick(1, 8), n = pick(1, 64), k = pick(1, 256);
    const QuantizedTensor qx = quantize(random(m, k), act);
    const QuantizedTensor qw = quantize(random(n, k), wspec, {ScaleStorage::kF16, 1.0});
    const Matrix fused = gemm_w4a8_per_channel(qx, qw, precompute_token_sums(dequantize(qx)));
    worst_channel = std::max(worst_channel, relative_frobenius_error(fused, gemm_w4a8_reference(qx, qw)));

    const std::size_t g = 32 * pick(1, 2);
    const std::size_t ng = 32 * pick(1, 2), kg = g * pick(1, 2);
    const ProgressiveWeight pw = quantize_progressive(random(ng, kg), g);
    const PackedWeights packed = pack_weights(pw.codes);
    if (!(dequant_stream(pw, packed) == dequantize_level1(pw))) ++stream_mismatch;
    const QuantizedTensor qxg = quantize(random(m, kg), act);
    const Matrix grouped = gemm_w4a8_per_group(qxg, pw, packed);
    worst_group = std::max(worst_group,
                           relative_frobenius_error(grouped, matmul_nt(dequantize(qxg), dequantize_full(pw))));
  }
  std::ostringstream s;
  s << kInstances << " instances: per-channel rel err " << worst_channel << ", per-group rel err "
    << worst_group << ", stream mismatches " << stream_mismatch;
  return {worst_channel <= 1e-9 && worst_group <= 1e-9 && stream_mismatch == 0, s.str()};
}

CheckResult check_kv(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> log_scale(-12.0, 2.0);
  std::uniform_int_distribution<int> zero_dist(0, 15);
  std::size_t bad = 0, total = 0;
  constexpr int kSamples = 1000;
  for (int i = 0; i < kSamples; ++i) {
    const double scale = round_to_f16(std::exp2(log_scale(rng)));
    const double zero = zero_dist(rng);
    for (std::uint32_t code = 0; code < 16; ++code) {
      const double ref = round_to_f16((static_cast<double>(code) - zero) * scale);
      const double got = dequant_fp16_trick(code, scale, zero);
      ++total;
      if (std::abs(got - ref) > f16_ulp(ref)) ++bad;
    }
  }
  const int trick = dequant_ops_count(DequantPath::kTrick);
  const int naive = dequant_ops_count(DequantPath::kNaive);
  std::ostringstream s;
  s << total << " (code, scale, zero) cases, " << bad << " beyond 1 ulp; ops trick " << trick
    << " vs naive " << naive;
  return {bad == 0 && trick == 2 && naive == 5, s.str()};
}

}  // namespace

CheckResult run_check(const std::string& suite, std::uint64_t seed) {
  if (suite == "protective") return check_protective();
  if (suite == "lanes") return check_lanes();
  if (suite == "gemm") return check_gemm(seed);
  if (suite == "kv") return check_kv(seed);
  fail(ErrorKind::kInvalidInput, "unknown check suite '" + suite + "'");
}

}  // namespace qtk::cli
