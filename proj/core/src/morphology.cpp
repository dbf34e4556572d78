// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#include "anomagic/morphology.hpp"

#include <algorithm>

#include "anomagic/errors.hpp"

namespace anomagic {

namespace {

// Separable running-window pass; `want` is the value that propagates
// (1 for dilation, 0 for erosion).
Mask window_pass(const Mask& in, std::size_t radius, bool horizontal, bool want) {
  const std::size_t H = in.height(), W = in.width();
  Mask out(H, W);
  const auto r = static_cast<std::ptrdiff_t>(radius);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      bool hit = false;
      for (std::ptrdiff_t d = -r; d <= r && !hit; ++d) {
        const auto yy = static_cast<std::ptrdiff_t>(y) + (horizontal ? 0 : d);
        const auto xx = static_cast<std::ptrdiff_t>(x) + (horizontal ? d : 0);
        if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(H) ||
            xx >= static_cast<std::ptrdiff_t>(W)) {
          hit = !want;  // outside counts as background
          continue;
        }
        hit = in(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) == want;
      }
      out.set(y, x, hit ? want : !want);
    }
  return out;
}

}  // namespace

Mask dilate(const Mask& mask, std::size_t radius) {
  if (radius == 0) return mask;
  return window_pass(window_pass(mask, radius, true, true), radius, false, true);
}

Mask erode(const Mask& mask, std::size_t radius) {
  if (radius == 0) return mask;
  return window_pass(window_pass(mask, radius, true, false), radius, false, false);
}

// Closes a copy padded by `radius` and crops it back, which matches closing
// on an unbounded background plane.
Mask close(const Mask& mask, std::size_t radius) {
  if (radius == 0) return mask;
  const std::size_t H = mask.height(), W = mask.width();
  Mask padded(H + 2 * radius, W + 2 * radius);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) padded.set(y + radius, x + radius, mask(y, x));
  const Mask closed = erode(dilate(padded, radius), radius);
  Mask out(H, W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) out.set(y, x, closed(y + radius, x + radius));
  return out;
}

Components connected_components(const Mask& mask) {
  const std::size_t H = mask.height(), W = mask.width();
  Components cc;
  cc.labels.assign(H * W, -1);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < H * W; ++start) {
    if (!mask.data()[start] || cc.labels[start] >= 0) continue;
    const int label = static_cast<int>(cc.sizes.size());
    std::size_t size = 0;
    stack.push_back(start);
    cc.labels[start] = label;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++size;
      const auto py = static_cast<std::ptrdiff_t>(p / W), px = static_cast<std::ptrdiff_t>(p % W);
      for (std::ptrdiff_t dy = -1; dy <= 1; ++dy)
        for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
          const auto ny = py + dy, nx = px + dx;
          if (ny < 0 || nx < 0 || ny >= static_cast<std::ptrdiff_t>(H) ||
              nx >= static_cast<std::ptrdiff_t>(W))
            continue;
          const auto q = static_cast<std::size_t>(ny) * W + static_cast<std::size_t>(nx);
          if (mask.data()[q] && cc.labels[q] < 0) {
            cc.labels[q] = label;
            stack.push_back(q);
          }
        }
    }
    cc.sizes.push_back(size);
  }
  return cc;
}

Mask remove_small_components(const Mask& mask, std::size_t min_area) {
  if (min_area <= 1) return mask;
  const auto cc = connected_components(mask);
  Mask out(mask.height(), mask.width());
  for (std::size_t i = 0; i < cc.labels.size(); ++i) {
    const int l = cc.labels[i];
    if (l >= 0 && cc.sizes[static_cast<std::size_t>(l)] >= min_area) {
      out.set(i / mask.width(), i % mask.width(), true);
    }
  }
  return out;
}

Mask any_pool(const Mask& mask, std::size_t rows, std::size_t cols) {
  const std::size_t H = mask.height(), W = mask.width();
  if (rows == 0 || cols == 0 || H < rows || W < cols) {
    throw ShapeError("any_pool: grid larger than mask");
  }
  Mask out(rows, cols);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      if (!mask(y, x)) continue;
      // cell i covers [floor(i*H/rows), floor((i+1)*H/rows)); invert that map
      std::size_t cy = (y * rows) / H;
      while ((cy + 1) * H / rows <= y) ++cy;
      while (cy * H / rows > y) --cy;
      std::size_t cx = (x * cols) / W;
      while ((cx + 1) * W / cols <= x) ++cx;
      while (cx * W / cols > x) --cx;
      out.set(cy, cx, true);
    }
  return out;
}

Mask upscale(const Mask& mask, std::size_t factor) {
  Mask out(mask.height() * factor, mask.width() * factor);
  for (std::size_t y = 0; y < out.height(); ++y)
    for (std::size_t x = 0; x < out.width(); ++x) out.set(y, x, mask(y / factor, x / factor));
  return out;
}

}  // namespace anomagic
