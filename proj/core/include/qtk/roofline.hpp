// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace qtk {

enum class ComputeClass { kFp16, kInt8, kInt4, kFp32Cuda, kFp16Cuda };

std::string to_string(ComputeClass c);

struct HardwareSpec {
  std::string name;
  std::map<ComputeClass, double> peak_ops;  // Ops/s
  double mem_bandwidth = 0.0;               // bytes/s

  double peak(ComputeClass c) const;
  void validate() const;

  /// A100: 312/624/1248 TOPS fp16/int8/int4 tensor cores, 19.6 TOPS fp32
  /// CUDA cores (39.2 fp16), 2 TB/s.
  static HardwareSpec a100();
  /// Parses `key = value` lines; keys: name, mem_bandwidth, peak.fp16,
  /// peak.int8, peak.int4, peak.fp32_cuda, peak.fp16_cuda. '#' starts a comment.
  static HardwareSpec parse(const std::string& text);
  static HardwareSpec load(const std::filesystem::path& path);
};

/// x-bit weights, y-bit activations, z-bit KV cache.
struct PrecisionConfig {
  int weight_bits = 16;
  int act_bits = 16;
  int kv_bits = 16;
  ComputeClass compute = ComputeClass::kFp16;

  std::string name() const;
  /// "W4A8", "W4A8KV4", ...; compute precision follows the activation bits.
  static PrecisionConfig parse(const std::string& name);
};

/// Ops per byte of weight traffic for an m x n x k GEMM with n, k >> m.
double gemm_intensity(std::size_t m, const PrecisionConfig& cfg);
/// min(peak[compute], intensity * bandwidth).
double gemm_attainable(std::size_t m, const PrecisionConfig& cfg, const HardwareSpec& hw);
bool gemm_is_memory_bound(std::size_t m, const PrecisionConfig& cfg, const HardwareSpec& hw);

enum class Accumulation { kFp32, kFp16 };
enum class Bound { kMemoryBound, kComputeBound };

struct AttentionBound {
  Bound bound = Bound::kMemoryBound;
  double intensity = 0.0;      // Ops per byte of KV traffic
  double turning_point = 0.0;  // Ops per byte where the CUDA-core roof is hit
  double margin = 0.0;         // intensity / turning_point
};

AttentionBound attention_bound(int kv_bits, int dequant_ops_per_elem, Accumulation accum,
                               const HardwareSpec& hw);

/// Smallest m at which b catches up with a after a stretch where a is ahead.
std::optional<std::size_t> crossover(const PrecisionConfig& a, const PrecisionConfig& b,
                                     const HardwareSpec& hw, std::size_t m_min, std::size_t m_max);

struct RooflinePoint {
  std::size_t m = 0;
  std::string config;
  double ops_per_s = 0.0;
  Bound bound = Bound::kMemoryBound;
};

std::vector<RooflinePoint> roofline_sweep(const std::vector<PrecisionConfig>& configs,
                                          const HardwareSpec& hw, std::size_t m_min,
                                          std::size_t m_max);
/// Columns: m,config,ops_per_s,bound.
std::string roofline_csv(const std::vector<RooflinePoint>& points);
std::string roofline_svg(const std::vector<RooflinePoint>& points, const std::string& title);

}  // namespace qtk
