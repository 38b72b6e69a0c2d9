// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qtk/half.hpp"

#include <cmath>

#include "qtk/error.hpp"

namespace qtk {
namespace {

constexpr int kMinNormalExp = -14;
constexpr int kMantissaBits = 10;
// 2^-24: spacing of subnormal halves.
const double kSubnormalQuantum = std::ldexp(1.0, kMinNormalExp - kMantissaBits);

}  // namespace

double round_to_f16(double x) {
  require(std::isfinite(x), ErrorKind::kInvalidInput, "round_to_f16: non-finite input");
  if (x == 0.0) return x;
  const double mag = std::abs(x);
  const int exp = std::ilogb(mag);
  // Scaling by a power of two is exact, so nearbyint performs the only rounding.
  const double quantum =
      exp < kMinNormalExp ? kSubnormalQuantum : std::ldexp(1.0, exp - kMantissaBits);
  double rounded = std::nearbyint(mag / quantum) * quantum;
  if (rounded > kHalfMax) rounded = kHalfMax;
  return std::copysign(rounded, x);
}

std::uint16_t f16_bits(double x) {
  const double v = round_to_f16(x);
  const std::uint16_t sign = std::signbit(v) ? 0x8000 : 0;
  const double mag = std::abs(v);
  if (mag == 0.0) return sign;
  const int exp = std::ilogb(mag);
  if (exp < kMinNormalExp) {
    return sign | static_cast<std::uint16_t>(mag / kSubnormalQuantum);
  }
  const auto mant = static_cast<std::uint16_t>(std::ldexp(mag, kMantissaBits - exp) - 1024.0);
  const auto biased = static_cast<std::uint16_t>(exp + 15);
  return sign | static_cast<std::uint16_t>(biased << kMantissaBits) | mant;
}

double f16_from_bits(std::uint16_t bits) {
  const int biased = (bits >> kMantissaBits) & 0x1F;
  const int mant = bits & 0x3FF;
  double mag;
  if (biased == 0) {
    mag = mant * kSubnormalQuantum;
  } else if (biased == 0x1F) {
    mag = mant == 0 ? INFINITY : NAN;
  } else {
    mag = std::ldexp(1024.0 + mant, biased - 15 - kMantissaBits);
  }
  return (bits & 0x8000) ? -mag : mag;
}

double f16_ulp(double x) {
  const double mag = std::abs(x);
  if (mag < std::ldexp(1.0, kMinNormalExp)) return kSubnormalQuantum;
  return std::ldexp(1.0, std::ilogb(mag) - kMantissaBits);
}

}  // namespace qtk
