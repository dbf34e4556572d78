// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "anomagic/tensor.hpp"

namespace anomagic {

using Rng = std::mt19937_64;

/// Derives an independent stream seed from (base, index), e.g. one per request.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

/// 64-bit FNV-1a of a string; used to seed hash-keyed tables.
std::uint64_t fnv1a64(std::string_view s);

Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0);
Tensor rand_uniform(const Shape& shape, Rng& rng, double lo, double hi);

}  // namespace anomagic
