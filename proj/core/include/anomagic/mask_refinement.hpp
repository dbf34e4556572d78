// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>

#include "anomagic/image.hpp"

namespace anomagic {

/// Scores per-pixel change between two same-sized images, values in [0, 1].
class ChangeDetector {
 public:
  virtual ~ChangeDetector() = default;
  virtual std::string name() const = 0;
  /// [H, W] map.
  virtual Tensor score(const Image& a, const Image& b) const = 0;
};

/// Max over channels of |a - b|, clamped to [0, 1].
Tensor absdiff_score(const Image& a, const Image& b);

class AbsDiffDetector final : public ChangeDetector {
 public:
  std::string name() const override { return "absdiff"; }
  Tensor score(const Image& a, const Image& b) const override { return absdiff_score(a, b); }
};

/// Named detectors. "absdiff" is built in; external change-detection models
/// plug in through `register_detector`.
class DetectorRegistry {
 public:
  using Factory = std::function<std::unique_ptr<ChangeDetector>()>;
  DetectorRegistry();
  void register_detector(const std::string& name, Factory factory);
  std::unique_ptr<ChangeDetector> create(const std::string& name) const;

 private:
  std::map<std::string, Factory> factories_;
};

struct RefineConfig {
  double threshold = 0.9;
  std::size_t min_component_area = 4;
  std::size_t closing_radius = 1;
};

/// Pixels with score >= threshold, no cleanup.
Mask threshold_map(const Tensor& score, double threshold);

/// cleanup(score >= threshold) intersected with the coarse mask, where
/// cleanup is closing followed by small-component removal.
Mask refine(const Image& input, const Image& generated, const Mask& coarse_mask,
            const ChangeDetector& detector, const RefineConfig& config = {});

}  // namespace anomagic
