// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "qtk/half.hpp"
#include "qtk/matrix.hpp"

namespace qtk {

/// How scale factors / zero points are shared across a row-major tensor.
/// Channels are rows; groups are contiguous column runs inside a row.
struct Granularity {
  enum class Kind { kPerTensor, kPerChannel, kPerGroup };

  Kind kind = Kind::kPerTensor;
  std::size_t group_size = 0;

  static Granularity per_tensor() { return {Kind::kPerTensor, 0}; }
  static Granularity per_channel() { return {Kind::kPerChannel, 0}; }
  static Granularity per_group(std::size_t g) { return {Kind::kPerGroup, g}; }

  friend bool operator==(const Granularity&, const Granularity&) = default;
};

struct QuantSpec {
  int bits = 8;
  bool symmetric = true;
  Granularity granularity;
  std::int32_t clamp_lo = -127;
  std::int32_t clamp_hi = 127;

  /// Signed symmetric range [-(2^(b-1)-1), 2^(b-1)-1].
  static QuantSpec symmetric_signed(int bits, Granularity g);
  /// Symmetric with an explicit (shrunken) range [-hi, hi].
  static QuantSpec symmetric_range(int bits, std::int32_t hi, Granularity g);
  /// Unsigned asymmetric range [0, 2^b - 1].
  static QuantSpec asymmetric_unsigned(int bits, Granularity g);

  /// Throws InvalidInput when the fields break the range invariants.
  void validate() const;

  friend bool operator==(const QuantSpec&, const QuantSpec&) = default;
};

enum class ScaleStorage { kExact, kF16 };

struct QuantOptions {
  ScaleStorage scale_storage = ScaleStorage::kExact;
  /// Clip ratio applied to the dynamic range (x_min, x_max) before scaling.
  double clip_ratio = 1.0;
};

struct ScaleZero {
  double scale = 1.0;
  std::int32_t zero = 0;
};

struct QuantizedTensor {
  CodeMatrix codes;
  std::vector<double> scales;
  std::vector<std::int32_t> zeros;
  QuantSpec spec;

  std::size_t rows() const { return codes.rows(); }
  std::size_t cols() const { return codes.cols(); }
  /// Index into scales/zeros for element (r, c).
  std::size_t unit_index(std::size_t r, std::size_t c) const;
  double scale_at(std::size_t r, std::size_t c) const { return scales[unit_index(r, c)]; }
  std::int32_t zero_at(std::size_t r, std::size_t c) const { return zeros[unit_index(r, c)]; }
};

/// Round half away from zero.
inline double round_half_away(double x) { return std::round(x); }

ScaleZero compute_scale_zero(double x_min, double x_max, const QuantSpec& spec,
                             ScaleStorage storage = ScaleStorage::kExact);

/// Code for a single value given its sharing unit's scale and zero.
std::int32_t quantize_value(double x, const ScaleZero& sz, const QuantSpec& spec);

QuantizedTensor quantize(const Matrix& x, const QuantSpec& spec, const QuantOptions& opts = {});
Matrix dequantize(const QuantizedTensor& q);

/// Number of sharing units along rows/cols for a shape.
std::size_t units_per_row(const Granularity& g, std::size_t cols);

}  // namespace qtk
