// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

// On-disk tensor container.
//
//   bytes 0..3     "QTZ1"
//   bytes 4..11    manifest length L, u64 little-endian
//   bytes 12..     manifest, L bytes of text, one record per line:
//                    meta <key> <value...>
//                    tensor <name> <dtype> <rows>x<cols> <offset> <length>
//   payload        zero padding, then each tensor at its absolute file
//                  offset, 64-byte aligned, little-endian
//
// dtypes: f64, f16 (IEEE half bit patterns), u8, u4 (two codes per byte,
// element 2i in the low nibble), i8.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qtk/matrix.hpp"

namespace qtk {

enum class DType { kF64, kF16, kU8, kU4, kI8 };

std::string to_string(DType t);
DType parse_dtype(const std::string& s);
/// Payload bytes for `count` elements.
std::size_t payload_bytes(DType t, std::size_t count);

inline constexpr char kContainerMagic[4] = {'Q', 'T', 'Z', '1'};
inline constexpr std::size_t kContainerAlign = 64;

struct TensorRecord {
  std::string name;
  DType dtype = DType::kF64;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bytes;

  friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

class TensorContainer {
 public:
  void put_f64(const std::string& name, const Matrix& m);
  void put_f64(const std::string& name, std::span<const double> v);
  /// Values must be exactly representable in f16.
  void put_f16(const std::string& name, const Matrix& m);
  void put_f16(const std::string& name, std::span<const double> v);
  void put_u8(const std::string& name, const CodeMatrix& m);
  void put_u4(const std::string& name, const CodeMatrix& m);
  void put_i8(const std::string& name, const Int8Matrix& m);
  void put_raw(TensorRecord record);

  bool contains(const std::string& name) const;
  const TensorRecord& record(const std::string& name) const;
  Matrix get_matrix(const std::string& name) const;       // f64 or f16
  std::vector<double> get_vector(const std::string& name) const;
  CodeMatrix get_codes(const std::string& name) const;    // u8 or u4
  Int8Matrix get_i8(const std::string& name) const;

  void set_meta(const std::string& key, const std::string& value);
  std::optional<std::string> meta(const std::string& key) const;
  /// Throws FormatError when the key is absent.
  const std::string& require_meta(const std::string& key) const;
  const std::map<std::string, std::string>& metadata() const { return meta_; }
  const std::vector<TensorRecord>& tensors() const { return tensors_; }

  std::vector<std::uint8_t> serialize() const;
  /// Validates magic, manifest syntax, alignment, bounds and overlap.
  static TensorContainer deserialize(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static TensorContainer load(const std::filesystem::path& path);

  friend bool operator==(const TensorContainer&, const TensorContainer&) = default;

 private:
  std::vector<TensorRecord> tensors_;  // insertion order
  std::map<std::string, std::string> meta_;
};

}  // namespace qtk
