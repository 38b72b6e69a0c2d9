// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qtk/container.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "qtk/error.hpp"
#include "qtk/half.hpp"

namespace qtk {
namespace {

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::uint8_t* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t{p[i]} << (8 * i);
  return v;
}

std::size_t align_up(std::size_t v) {
  return (v + kContainerAlign - 1) / kContainerAlign * kContainerAlign;
}

bool valid_token(const std::string& s) {
  return !s.empty() && std::none_of(s.begin(), s.end(), [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r';
  });
}

std::size_t parse_size(const std::string& s, const std::string& what) {
  require(!s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }),
          ErrorKind::kFormatError, "manifest: bad " + what + " '" + s + "'");
  try {
    return static_cast<std::size_t>(std::stoull(s));
  } catch (const std::out_of_range&) {
    fail(ErrorKind::kFormatError, "manifest: " + what + " out of range");
  }
}

TensorRecord make_record(const std::string& name, DType t, std::size_t rows, std::size_t cols) {
  require(valid_token(name), ErrorKind::kInvalidInput,
          "container: tensor names must be non-empty and free of whitespace");
  TensorRecord r;
  r.name = name;
  r.dtype = t;
  r.rows = rows;
  r.cols = cols;
  r.bytes.reserve(payload_bytes(t, rows * cols));
  return r;
}

template <typename Fn>
void put_doubles(TensorRecord& r, std::span<const double> v, Fn&& encode) {
  for (double x : v) encode(r.bytes, x);
}

}  // namespace

std::string to_string(DType t) {
  switch (t) {
    case DType::kF64: return "f64";
    case DType::kF16: return "f16";
    case DType::kU8: return "u8";
    case DType::kU4: return "u4";
    case DType::kI8: return "i8";
  }
  return "?";
}

DType parse_dtype(const std::string& s) {
  for (DType t : {DType::kF64, DType::kF16, DType::kU8, DType::kU4, DType::kI8})
    if (to_string(t) == s) return t;
  fail(ErrorKind::kFormatError, "unknown dtype '" + s + "'");
}

std::size_t payload_bytes(DType t, std::size_t count) {
  switch (t) {
    case DType::kF64: return 8 * count;
    case DType::kF16: return 2 * count;
    case DType::kU4: return (count + 1) / 2;
    default: return count;
  }
}

void TensorContainer::put_raw(TensorRecord record) {
  require(valid_token(record.name), ErrorKind::kInvalidInput,
          "container: tensor names must be non-empty and free of whitespace");
  require(record.bytes.size() == payload_bytes(record.dtype, record.rows * record.cols),
          ErrorKind::kInvalidInput, "container: payload size does not match dtype and shape");
  require(!contains(record.name), ErrorKind::kInvalidInput,
          "container: duplicate tensor '" + record.name + "'");
  tensors_.push_back(std::move(record));
}

void TensorContainer::put_f64(const std::string& name, const Matrix& m) {
  TensorRecord r = make_record(name, DType::kF64, m.rows(), m.cols());
  put_doubles(r, m.data(), [](auto& out, double x) { put_le(out, std::bit_cast<std::uint64_t>(x), 8); });
  put_raw(std::move(r));
}

void TensorContainer::put_f64(const std::string& name, std::span<const double> v) {
  put_f64(name, Matrix(1, v.size(), std::vector<double>(v.begin(), v.end())));
}

void TensorContainer::put_f16(const std::string& name, const Matrix& m) {
  TensorRecord r = make_record(name, DType::kF16, m.rows(), m.cols());
  put_doubles(r, m.data(), [&name](auto& out, double x) {
    require(round_to_f16(x) == x, ErrorKind::kInvalidInput,
            "container: tensor '" + name + "' holds a value that is not exactly f16");
    put_le(out, f16_bits(x), 2);
  });
  put_raw(std::move(r));
}

void TensorContainer::put_f16(const std::string& name, std::span<const double> v) {
  put_f16(name, Matrix(1, v.size(), std::vector<double>(v.begin(), v.end())));
}

void TensorContainer::put_u8(const std::string& name, const CodeMatrix& m) {
  TensorRecord r = make_record(name, DType::kU8, m.rows(), m.cols());
  for (std::int32_t c : m.data()) {
    require(c >= 0 && c <= 255, ErrorKind::kInvalidInput, "container: u8 value out of range");
    r.bytes.push_back(static_cast<std::uint8_t>(c));
  }
  put_raw(std::move(r));
}

void TensorContainer::put_u4(const std::string& name, const CodeMatrix& m) {
  TensorRecord r = make_record(name, DType::kU4, m.rows(), m.cols());
  r.bytes.assign(payload_bytes(DType::kU4, m.size()), 0);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const std::int32_t c = m.data()[i];
    require(c >= 0 && c <= 15, ErrorKind::kInvalidInput, "container: u4 value out of range");
    r.bytes[i / 2] |= static_cast<std::uint8_t>(c << (4 * (i % 2)));
  }
  put_raw(std::move(r));
}

void TensorContainer::put_i8(const std::string& name, const Int8Matrix& m) {
  TensorRecord r = make_record(name, DType::kI8, m.rows(), m.cols());
  for (std::int8_t c : m.data()) r.bytes.push_back(static_cast<std::uint8_t>(c));
  put_raw(std::move(r));
}

bool TensorContainer::contains(const std::string& name) const {
  return std::any_of(tensors_.begin(), tensors_.end(), [&](const auto& t) { return t.name == name; });
}

const TensorRecord& TensorContainer::record(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return t;
  fail(ErrorKind::kFormatError, "container: no tensor named '" + name + "'");
}

Matrix TensorContainer::get_matrix(const std::string& name) const {
  const TensorRecord& r = record(name);
  Matrix m(r.rows, r.cols);
  if (r.dtype == DType::kF64) {
    for (std::size_t i = 0; i < m.size(); ++i)
      m.data()[i] = std::bit_cast<double>(get_le(&r.bytes[8 * i], 8));
  } else if (r.dtype == DType::kF16) {
    for (std::size_t i = 0; i < m.size(); ++i)
      m.data()[i] = f16_from_bits(static_cast<std::uint16_t>(get_le(&r.bytes[2 * i], 2)));
  } else {
    fail(ErrorKind::kFormatError, "container: '" + name + "' is not a float tensor");
  }
  return m;
}

std::vector<double> TensorContainer::get_vector(const std::string& name) const {
  return get_matrix(name).storage();
}

CodeMatrix TensorContainer::get_codes(const std::string& name) const {
  const TensorRecord& r = record(name);
  CodeMatrix m(r.rows, r.cols);
  if (r.dtype == DType::kU8) {
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = r.bytes[i];
  } else if (r.dtype == DType::kU4) {
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = (r.bytes[i / 2] >> (4 * (i % 2))) & 0x0F;
  } else {
    fail(ErrorKind::kFormatError, "container: '" + name + "' is not an unsigned code tensor");
  }
  return m;
}

Int8Matrix TensorContainer::get_i8(const std::string& name) const {
  const TensorRecord& r = record(name);
  require(r.dtype == DType::kI8, ErrorKind::kFormatError, "container: '" + name + "' is not i8");
  Int8Matrix m(r.rows, r.cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = static_cast<std::int8_t>(r.bytes[i]);
  return m;
}

void TensorContainer::set_meta(const std::string& key, const std::string& value) {
  require(valid_token(key), ErrorKind::kInvalidInput, "container: bad metadata key");
  require(value.find('\n') == std::string::npos && value.find('\r') == std::string::npos,
          ErrorKind::kInvalidInput, "container: metadata values must be single-line");
  meta_[key] = value;
}

std::optional<std::string> TensorContainer::meta(const std::string& key) const {
  const auto it = meta_.find(key);
  if (it == meta_.end()) return std::nullopt;
  return it->second;
}

const std::string& TensorContainer::require_meta(const std::string& key) const {
  const auto it = meta_.find(key);
  require(it != meta_.end(), ErrorKind::kFormatError, "container: missing metadata '" + key + "'");
  return it->second;
}

std::vector<std::uint8_t> TensorContainer::serialize() const {
  // Offsets depend on the manifest length, which depends on the offsets'
  // digit counts; iterate until the layout is stable.
  std::string manifest;
  std::vector<std::size_t> offsets(tensors_.size());
  std::size_t header = 0;
  for (int pass = 0; pass < 8; ++pass) {
    std::size_t pos = align_up(12 + header);
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      offsets[i] = pos;
      pos = align_up(pos + tensors_[i].bytes.size());
    }
    std::ostringstream m;
    for (const auto& [k, v] : meta_) m << "meta " << k << ' ' << v << '\n';
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      const auto& t = tensors_[i];
      m << "tensor " << t.name << ' ' << to_string(t.dtype) << ' ' << t.rows << 'x' << t.cols << ' '
        << offsets[i] << ' ' << t.bytes.size() << '\n';
    }
    manifest = m.str();
    if (manifest.size() == header) break;
    header = manifest.size();
  }

  std::vector<std::uint8_t> out(kContainerMagic, kContainerMagic + 4);
  put_le(out, manifest.size(), 8);
  out.insert(out.end(), manifest.begin(), manifest.end());
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    out.resize(offsets[i], 0);
    out.insert(out.end(), tensors_[i].bytes.begin(), tensors_[i].bytes.end());
  }
  out.resize(align_up(out.size()), 0);
  return out;
}

TensorContainer TensorContainer::deserialize(std::span<const std::uint8_t> bytes) {
  require(bytes.size() >= 12 && std::memcmp(bytes.data(), kContainerMagic, 4) == 0,
          ErrorKind::kFormatError, "container: bad magic");
  const std::uint64_t mlen = get_le(bytes.data() + 4, 8);
  require(mlen <= bytes.size() - 12, ErrorKind::kFormatError, "container: manifest runs past the end");
  const std::string manifest(reinterpret_cast<const char*>(bytes.data() + 12), mlen);

  TensorContainer c;
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::istringstream in(manifest);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      require(!value.empty() && value[0] == ' ', ErrorKind::kFormatError, "manifest: bad meta line");
      c.set_meta(key, value.substr(1));
    } else if (kind == "tensor") {
      std::string name, dtype, shape, off, len, extra;
      ls >> name >> dtype >> shape >> off >> len;
      require(!len.empty() && !(ls >> extra), ErrorKind::kFormatError, "manifest: bad tensor line");
      const auto x = shape.find('x');
      require(x != std::string::npos, ErrorKind::kFormatError, "manifest: bad shape '" + shape + "'");
      TensorRecord r;
      r.name = name;
      r.dtype = parse_dtype(dtype);
      r.rows = parse_size(shape.substr(0, x), "rows");
      r.cols = parse_size(shape.substr(x + 1), "cols");
      const std::size_t offset = parse_size(off, "offset");
      const std::size_t length = parse_size(len, "length");
      require(length == payload_bytes(r.dtype, r.rows * r.cols), ErrorKind::kFormatError,
              "manifest: length of '" + name + "' disagrees with its shape");
      require(offset % kContainerAlign == 0, ErrorKind::kFormatError,
              "manifest: '" + name + "' is not 64-byte aligned");
      require(offset >= 12 + mlen && offset <= bytes.size() && length <= bytes.size() - offset,
              ErrorKind::kFormatError, "manifest: '" + name + "' is out of bounds");
      spans.emplace_back(offset, length);
      r.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                     bytes.begin() + static_cast<std::ptrdiff_t>(offset + length));
      c.put_raw(std::move(r));
    } else {
      fail(ErrorKind::kFormatError, "manifest: unknown record '" + kind + "'");
    }
  }
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i)
    require(spans[i - 1].first + spans[i - 1].second <= spans[i].first, ErrorKind::kFormatError,
            "manifest: tensor payloads overlap");
  return c;
}

void TensorContainer::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::kIoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::kIoError, "write failed for " + path.string());
}

TensorContainer TensorContainer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIoError, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace qtk
