// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace qtk::testing {

struct Fixture {
  std::string file;
  std::vector<std::uint8_t> bytes;
};

/// Binary fixtures built only from the frozen layouts and raw mt19937_64
/// output, so the bytes are identical on every conforming platform.
std::vector<Fixture> make_golden_fixtures();

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace qtk::testing
