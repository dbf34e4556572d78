// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "anomagic/image.hpp"

namespace anomagic {

/// Dilation with a square structuring element of side 2*radius+1.
Mask dilate(const Mask& mask, std::size_t radius);
/// Erosion with the same element; pixels outside the image count as background.
Mask erode(const Mask& mask, std::size_t radius);
/// Dilation followed by erosion, computed as if the image continued as
/// background, so the result always contains `mask`.
Mask close(const Mask& mask, std::size_t radius);

struct Components {
  std::vector<int> labels;  // -1 background, else component index
  std::vector<std::size_t> sizes;
  std::size_t count() const noexcept { return sizes.size(); }
};

/// 8-connected component labelling.
Components connected_components(const Mask& mask);
Mask remove_small_components(const Mask& mask, std::size_t min_area);

/// A cell is foreground iff any pixel of its window is foreground. Windows
/// partition the image by integer division (window of cell i spans
/// [floor(i*H/rows), floor((i+1)*H/rows))).
Mask any_pool(const Mask& mask, std::size_t rows, std::size_t cols);

/// Nearest-neighbour upscale by an integer factor.
Mask upscale(const Mask& mask, std::size_t factor);

}  // namespace anomagic
