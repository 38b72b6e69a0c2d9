// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace qtk {

inline constexpr double kHalfMax = 65504.0;

/// Nearest IEEE binary16 value (ties to even), widened back to double.
/// Magnitudes beyond the largest finite half clamp to +-65504.
double round_to_f16(double x);

/// Bit pattern of round_to_f16(x).
std::uint16_t f16_bits(double x);

double f16_from_bits(std::uint16_t bits);

/// Spacing of binary16 values at |x| (the subnormal spacing near zero).
double f16_ulp(double x);

}  // namespace qtk
