// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "qtk/matrix.hpp"

namespace qtk {

/// Two-level weight: u4 codes with per-group u4 zeros and integer u8 scales
/// (level 2) on top of per-channel f16 scales (level 1).
///
///   level-1 value  = (codes - zeros) * scales_l2      (always in int8)
///   weight         = level-1 value * scales_l1
struct ProgressiveWeight {
  std::size_t n = 0;  // output channels
  std::size_t k = 0;  // input channels
  std::size_t group_size = 128;
  CodeMatrix codes;      // n x k, [0, 15]
  CodeMatrix zeros;      // n x k/g, [0, 15]
  CodeMatrix scales_l2;  // n x k/g, [1, 255]
  std::vector<double> scales_l1;  // n, f16-representable

  std::size_t groups_per_row() const { return k / group_size; }
  std::int32_t zero_at(std::size_t r, std::size_t c) const { return zeros(r, c / group_size); }
  std::int32_t scale_l2_at(std::size_t r, std::size_t c) const {
    return scales_l2(r, c / group_size);
  }

  friend bool operator==(const ProgressiveWeight&, const ProgressiveWeight&) = default;
};

/// Per-group scales quantized to u8 on top of per-channel scales, with the
/// codes already in the target precision. Kept for contrast with the
/// progressive layout.
struct LegacyTwoLevelWeight {
  std::size_t n = 0;
  std::size_t k = 0;
  std::size_t group_size = 128;
  CodeMatrix codes;            // n x k, [-7, 7]
  CodeMatrix scales_group_u8;  // n x k/g, [1, 255]
  std::vector<double> scales_channel;
};

// Level-2 quantization rules on int8 intermediates. The group range always
// includes zero; the scale is the smallest integer covering it in 15 steps.
std::int32_t level2_scale(std::int32_t group_min, std::int32_t group_max);
std::int32_t level2_zero(std::int32_t group_min, std::int32_t scale);
std::int32_t level2_code(std::int32_t q, std::int32_t scale, std::int32_t zero);

struct ProtectiveSweep {
  std::int32_t range = 0;
  std::uint64_t cases = 0;       // (pair, code) combinations visited
  std::uint64_t checked = 0;     // reachable codes actually reconstructed
  std::uint64_t violations = 0;  // reconstructions outside [-128, 127]
  std::int32_t max_scale = 0;
  /// First offending (group_min, group_max, code) when violations > 0.
  std::optional<std::array<std::int32_t, 3>> first_violation;
};

/// Exhaustive check of the level-2 rules for every group (min, max) in
/// [-range, range]^2 and every u4 code reachable from that group.
ProtectiveSweep sweep_protective_range(std::int32_t range);

/// Largest symmetric level-1 range whose sweep is violation-free. Only the
/// (8, 4) combination is supported.
std::pair<std::int32_t, std::int32_t> protective_range(int bits_l1, int bits_l2);

ProgressiveWeight quantize_progressive(const Matrix& w, std::size_t group_size,
                                       double clip_ratio = 1.0);
/// Integer intermediate (codes - z) * s1. Throws OverflowViolation if any
/// entry leaves int8.
Int8Matrix dequantize_level1(const ProgressiveWeight& pw);
Matrix dequantize_full(const ProgressiveWeight& pw);

LegacyTwoLevelWeight quantize_legacy_two_level(const Matrix& w, std::size_t group_size);
Matrix dequantize_legacy(const LegacyTwoLevelWeight& lw);
/// codes * s1 without the channel scale; generally not an int8 tensor.
CodeMatrix legacy_group_only_reconstruction(const LegacyTwoLevelWeight& lw);

}  // namespace qtk
