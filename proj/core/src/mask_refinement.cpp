// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#include "anomagic/mask_refinement.hpp"

#include <algorithm>
#include <cmath>

#include "anomagic/errors.hpp"
#include "anomagic/morphology.hpp"

namespace anomagic {

Tensor absdiff_score(const Image& a, const Image& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("absdiff_score: image sizes differ");
  }
  Tensor out({a.height(), a.width()});
  for (std::size_t y = 0; y < a.height(); ++y)
    for (std::size_t x = 0; x < a.width(); ++x) {
      double m = 0.0;
      for (std::size_t c = 0; c < Image::channels(); ++c) m = std::max(m, std::abs(a.at(c, y, x) - b.at(c, y, x)));
      out.at(y, x) = std::clamp(m, 0.0, 1.0);
    }
  return out;
}

DetectorRegistry::DetectorRegistry() {
  factories_["absdiff"] = [] { return std::make_unique<AbsDiffDetector>(); };
}

void DetectorRegistry::register_detector(const std::string& name, Factory factory) {
  factories_[name] = std::move(factory);
}

std::unique_ptr<ChangeDetector> DetectorRegistry::create(const std::string& name) const {
  auto it = factories_.find(name);
  if (it == factories_.end()) throw ConfigError("unknown change detector '" + name + "'");
  return it->second();
}

Mask threshold_map(const Tensor& score, double threshold) {
  if (score.ndim() != 2) throw ShapeError("threshold_map expects an [H, W] map");
  Mask m(score.dim(0), score.dim(1));
  for (std::size_t y = 0; y < m.height(); ++y)
    for (std::size_t x = 0; x < m.width(); ++x) m.set(y, x, score.at(y, x) >= threshold);
  return m;
}

Mask refine(const Image& input, const Image& generated, const Mask& coarse_mask,
            const ChangeDetector& detector, const RefineConfig& config) {
  if (!(config.threshold > 0.0 && config.threshold < 1.0)) {
    throw ValidationError("refinement threshold must lie in (0, 1)");
  }
  if (input.height() != generated.height() || input.width() != generated.width() ||
      coarse_mask.height() != input.height() || coarse_mask.width() != input.width()) {
    throw ShapeError("refine: input, generated image and coarse mask must share a resolution");
  }
  const Tensor score = detector.score(input, generated);
  if (score.ndim() != 2 || score.dim(0) != input.height() || score.dim(1) != input.width()) {
    throw ShapeError("change detector '" + detector.name() + "' returned a map of the wrong size");
  }
  Mask m = threshold_map(score, config.threshold);
  if (config.closing_radius > 0) m = close(m, config.closing_radius);
  if (config.min_component_area > 1) m = remove_small_components(m, config.min_component_area);
  return m & coarse_mask;
}

}  // namespace anomagic
