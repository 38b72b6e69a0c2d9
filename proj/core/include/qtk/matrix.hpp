// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "qtk/error.hpp"

namespace qtk {

/// Dense row-major 2-D array. `Matrix` (double) carries every unquantized
/// tensor; the integer instantiations carry codes and GEMM operands.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Grid(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, ErrorKind::kShapeError,
            "data length does not match rows*cols");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = Grid<double>;
using Int8Matrix = Grid<std::int8_t>;
using Int32Matrix = Grid<std::int32_t>;
using CodeMatrix = Grid<std::int32_t>;

Matrix transpose(const Matrix& a);
/// a (m x k) times b (k x n).
Matrix matmul(const Matrix& a, const Matrix& b);
/// a (m x k) times b^T where b is (n x k); the y = X W^T linear-layer product.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix identity(std::size_t n);

double frobenius_norm(const Matrix& a);
/// ||a - b||_F / ||b||_F, or ||a - b||_F when b is zero.
double relative_frobenius_error(const Matrix& a, const Matrix& b);
double mean_squared_error(const Matrix& a, const Matrix& b);
double max_abs_error(const Matrix& a, const Matrix& b);
bool all_finite(const Matrix& a);

}  // namespace qtk
