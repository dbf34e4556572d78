// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "anomagic/autograd.hpp"
#include "anomagic/image.hpp"
#include "anomagic/rng.hpp"

namespace anomagic::testing {

inline std::filesystem::path toy_dir() { return ANOMAGIC_TOY_DIR; }

/// Fresh directory under the system temp dir, removed first if present.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("anomagic-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline Image random_image(std::size_t h, std::size_t w, Rng& rng) {
  Image img(h, w);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : img.tensor().storage()) v = u(rng);
  return img.quantized();
}

inline Mask random_mask(std::size_t h, std::size_t w, double p, Rng& rng) {
  Mask m(h, w);
  std::bernoulli_distribution b(p);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) m.set(y, x, b(rng));
  return m;
}

inline Mask box_mask(std::size_t h, std::size_t w, std::size_t y0, std::size_t x0, std::size_t y1,
                     std::size_t x1) {
  Mask m(h, w);
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) m.set(y, x, true);
  return m;
}

/// Largest relative error between autograd and central-difference
/// gradients of scalar f at x; relative to max(|analytic|, |numeric|, floor).
inline double gradient_error(const std::function<ad::Var(const ad::Var&)>& f, const Tensor& x,
                             double h = 1e-6, double floor = 1e-3) {
  ad::Var leaf = ad::Var::leaf(x, true);
  ad::backward(f(leaf));
  const Tensor g = leaf.grad();
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double num = (f(ad::Var::constant(xp)).value()[0] - f(ad::Var::constant(xm)).value()[0]) / (2 * h);
    const double denom = std::max({std::abs(num), std::abs(g[i]), floor});
    worst = std::max(worst, std::abs(num - g[i]) / denom);
  }
  return worst;
}

}  // namespace anomagic::testing
