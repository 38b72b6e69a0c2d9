// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qtk/quant_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace qtk {

QuantSpec QuantSpec::symmetric_signed(int bits, Granularity g) {
  const std::int32_t hi = (1 << (bits - 1)) - 1;
  return {bits, true, g, -hi, hi};
}

QuantSpec QuantSpec::symmetric_range(int bits, std::int32_t hi, Granularity g) {
  return {bits, true, g, -hi, hi};
}

QuantSpec QuantSpec::asymmetric_unsigned(int bits, Granularity g) {
  return {bits, false, g, 0, (1 << bits) - 1};
}

void QuantSpec::validate() const {
  require(bits == 4 || bits == 8, ErrorKind::kInvalidInput, "bit width must be 4 or 8");
  require(clamp_lo < clamp_hi, ErrorKind::kInvalidInput, "empty code range");
  if (symmetric) {
    require(clamp_lo == -clamp_hi, ErrorKind::kInvalidInput, "symmetric range must be [-hi, hi]");
    require(clamp_hi <= (1 << (bits - 1)) - 1, ErrorKind::kInvalidInput,
            "symmetric range exceeds bit width");
  } else {
    require(clamp_lo == 0 && clamp_hi == (1 << bits) - 1, ErrorKind::kInvalidInput,
            "asymmetric range must be [0, 2^bits - 1]");
  }
  if (granularity.kind == Granularity::Kind::kPerGroup)
    require(granularity.group_size >= 1, ErrorKind::kInvalidInput, "group size must be >= 1");
}

std::size_t units_per_row(const Granularity& g, std::size_t cols) {
  return g.kind == Granularity::Kind::kPerGroup ? cols / g.group_size : 1;
}

std::size_t QuantizedTensor::unit_index(std::size_t r, std::size_t c) const {
  switch (spec.granularity.kind) {
    case Granularity::Kind::kPerTensor: return 0;
    case Granularity::Kind::kPerChannel: return r;
    case Granularity::Kind::kPerGroup:
      return r * (codes.cols() / spec.granularity.group_size) + c / spec.granularity.group_size;
  }
  return 0;
}

ScaleZero compute_scale_zero(double x_min, double x_max, const QuantSpec& spec,
                             ScaleStorage storage) {
  require(std::isfinite(x_min) && std::isfinite(x_max), ErrorKind::kInvalidInput,
          "compute_scale_zero: non-finite range");
  require(x_min <= x_max, ErrorKind::kInvalidInput, "compute_scale_zero: x_min > x_max");
  const double qmin = spec.clamp_lo;
  const double qmax = spec.clamp_hi;

  ScaleZero sz;
  if (spec.symmetric) {
    sz.scale = std::max(std::abs(x_min), std::abs(x_max)) / qmax;
  } else {
    // The representable range always covers zero, so z lands inside [qmin, qmax].
    const double lo = std::min(x_min, 0.0);
    const double hi = std::max(x_max, 0.0);
    sz.scale = (hi - lo) / (qmax - qmin);
  }
  if (storage == ScaleStorage::kF16) sz.scale = round_to_f16(sz.scale);
  if (sz.scale == 0.0) {
    sz.scale = 1.0;
    sz.zero = spec.symmetric ? 0 : spec.clamp_lo;
    return sz;
  }
  if (!spec.symmetric) {
    const double lo = std::min(x_min, 0.0);
    const double z = round_half_away(qmin - lo / sz.scale);
    sz.zero = static_cast<std::int32_t>(std::clamp(z, qmin, qmax));
  }
  return sz;
}

std::int32_t quantize_value(double x, const ScaleZero& sz, const QuantSpec& spec) {
  const double q = round_half_away(x / sz.scale + sz.zero);
  return static_cast<std::int32_t>(
      std::clamp(q, static_cast<double>(spec.clamp_lo), static_cast<double>(spec.clamp_hi)));
}

QuantizedTensor quantize(const Matrix& x, const QuantSpec& spec, const QuantOptions& opts) {
  spec.validate();
  require(all_finite(x), ErrorKind::kInvalidInput, "quantize: non-finite input");
  require(opts.clip_ratio > 0.0 && opts.clip_ratio <= 1.0, ErrorKind::kInvalidInput,
          "quantize: clip ratio must lie in (0, 1]");
  const auto& g = spec.granularity;
  if (g.kind == Granularity::Kind::kPerGroup) {
    require(x.cols() % g.group_size == 0, ErrorKind::kShapeError,
            "quantize: group size does not divide the column count");
  }

  QuantizedTensor q;
  q.spec = spec;
  q.codes = CodeMatrix(x.rows(), x.cols());

  // Each sharing unit is a set of (row range, column range) rectangles; rows x
  // column-runs covers all three granularities.
  const std::size_t run = g.kind == Granularity::Kind::kPerGroup ? g.group_size : x.cols();
  const std::size_t runs = x.cols() == 0 ? 0 : x.cols() / run;
  const bool whole = g.kind == Granularity::Kind::kPerTensor;
  const std::size_t unit_rows = whole ? 1 : x.rows();
  const std::size_t unit_cols = whole ? 1 : runs;
  q.scales.assign(unit_rows * unit_cols, 1.0);
  q.zeros.assign(unit_rows * unit_cols, 0);

  auto process = [&](std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1,
                     std::size_t unit) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t r = r0; r < r1; ++r)
      for (std::size_t c = c0; c < c1; ++c) {
        lo = std::min(lo, x(r, c));
        hi = std::max(hi, x(r, c));
      }
    if (lo > hi) lo = hi = 0.0;
    const ScaleZero sz =
        compute_scale_zero(lo * opts.clip_ratio, hi * opts.clip_ratio, spec, opts.scale_storage);
    q.scales[unit] = sz.scale;
    q.zeros[unit] = sz.zero;
    for (std::size_t r = r0; r < r1; ++r)
      for (std::size_t c = c0; c < c1; ++c) q.codes(r, c) = quantize_value(x(r, c), sz, spec);
  };

  if (whole) {
    process(0, x.rows(), 0, x.cols(), 0);
  } else {
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t u = 0; u < runs; ++u) process(r, r + 1, u * run, (u + 1) * run, r * runs + u);
  }
  return q;
}

Matrix dequantize(const QuantizedTensor& q) {
  Matrix out(q.rows(), q.cols());
  for (std::size_t r = 0; r < q.rows(); ++r)
    for (std::size_t c = 0; c < q.cols(); ++c) {
      const std::size_t u = q.unit_index(r, c);
      out(r, c) = (q.codes(r, c) - q.zeros[u]) * q.scales[u];
    }
  return out;
}

}  // namespace qtk
