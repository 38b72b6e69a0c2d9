// Copyright 2026 The qtk Authors
// SPDX-License-Identifier: Apache-2.0

// Container encodings of float and quantized blocks. Codes are stored as
// u4, integer scales as u8, f16 scales as f16 bit patterns and everything
// else (weights, permutations, rotation) as f64.

#pragma once

#include "qtk/container.hpp"
#include "qtk/pipeline.hpp"

namespace qtk {

inline constexpr const char* kToyBlockKind = "toy-block";
inline constexpr const char* kQuantizedBlockKind = "quantized-block";

TensorContainer block_to_container(const ToyBlock& block);
ToyBlock block_from_container(const TensorContainer& c);

TensorContainer quantized_to_container(const QuantizedBlock& qb);
QuantizedBlock quantized_from_container(const TensorContainer& c);

}  // namespace qtk
