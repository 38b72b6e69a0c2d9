// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "qtk_cli/cli.hpp"

int main(int argc, char** argv) { return qtk::cli::run(argc, argv, std::cout, std::cerr); }
