// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

// Element dequantization kernels written against a "machine" policy so the
// same source runs numerically (F16Machine) or under an op-counting audit.
// A machine provides:
//   lop3_and_or(a, mask, magic) -> (a & mask) | magic     one logical op
//   shr(a, s), band(a, m)                                  integer ops
//   to_half(bits)                                          reinterpret, free
//   i2f(a)                                                 int -> f16 convert
//   fsub(a, b), fmul(a, b)                                 f16 arithmetic
//   fma(a, b, c)                                           fused a * b + c

#pragma once

#include <cmath>
#include <cstdint>

#include "qtk/half.hpp"

namespace qtk::kernels {

struct TrickConstants {
  double scale = 1.0;
  double bias = 0.0;  // -(1024 + zero) * scale, held exactly
};

inline TrickConstants make_trick_constants(double scale, double zero) {
  return {scale, -(1024.0 + zero) * scale};
}

template <typename Machine>
double dequant_trick(Machine& m, std::uint32_t code_bits, std::uint32_t mask,
                     const TrickConstants& c) {
  const std::uint32_t spliced = m.lop3_and_or(code_bits, mask, 0x6400u);
  return m.fma(m.to_half(spliced), c.scale, c.bias);
}

template <typename Machine>
double dequant_naive(Machine& m, std::uint32_t packed, int shift, std::uint32_t mask,
                     double scale, double zero) {
  const std::uint32_t code = m.band(m.shr(packed, shift), mask);
  return m.fmul(m.fsub(m.i2f(code), zero), scale);
}

/// Numeric machine: every f16 result is rounded once, as by hardware.
struct F16Machine {
  std::uint32_t lop3_and_or(std::uint32_t a, std::uint32_t mask, std::uint32_t magic) {
    return (a & mask) | magic;
  }
  std::uint32_t shr(std::uint32_t a, int s) { return a >> s; }
  std::uint32_t band(std::uint32_t a, std::uint32_t m) { return a & m; }
  double to_half(std::uint32_t bits) { return f16_from_bits(static_cast<std::uint16_t>(bits)); }
  double i2f(std::uint32_t a) { return round_to_f16(static_cast<double>(a)); }
  double fsub(double a, double b) { return round_to_f16(a - b); }
  double fmul(double a, double b) { return round_to_f16(a * b); }
  double fma(double a, double b, double c) { return round_to_f16(std::fma(a, b, c)); }
};

}  // namespace qtk::kernels
