// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

namespace qtk::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point shared by the executable and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

struct CheckResult {
  bool ok = false;
  std::string summary;
};

/// Suites: protective, lanes, gemm, kv. Unknown names throw InvalidInput.
CheckResult run_check(const std::string& suite, std::uint64_t seed);

}  // namespace qtk::cli
