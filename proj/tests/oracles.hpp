// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Brute-force reference implementations used to check the metric code.

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "anomagic/evaluation.hpp"

namespace anomagic::oracle {

/// Counts every (positive, negative) pair.
inline double roc_auc(const std::vector<ScoredLabel>& items) {
  std::size_t twice = 0, pos = 0, neg = 0;
  for (const auto& a : items) (a.label ? pos : neg) += 1;
  for (const auto& p : items) {
    if (!p.label) continue;
    for (const auto& n : items) {
      if (n.label) continue;
      twice += p.score > n.score ? 2 : p.score == n.score ? 1 : 0;
    }
  }
  return static_cast<double>(twice) / 2.0 / static_cast<double>(pos * neg);
}

/// Tries every observed score as a threshold.
inline double max_f1(const std::vector<ScoredLabel>& items) {
  double best = 0.0;
  for (const auto& t : items) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (const auto& it : items) {
      const bool pred = it.score >= t.score;
      if (pred && it.label) ++tp;
      if (pred && !it.label) ++fp;
      if (!pred && it.label) ++fn;
    }
    best = std::max(best, 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn));
  }
  return best;
}

/// 8-connected labels by repeated flood fill in raster order.
inline std::vector<int> label_regions(const Mask& m, int& count) {
  const std::size_t H = m.height(), W = m.width();
  std::vector<int> lab(H * W, -1);
  count = 0;
  for (std::size_t s = 0; s < H * W; ++s) {
    if (!m(s / W, s % W) || lab[s] >= 0) continue;
    lab[s] = count;
    bool grew = true;
    while (grew) {
      grew = false;
      for (std::size_t p = 0; p < H * W; ++p) {
        if (lab[p] != count) continue;
        const long py = static_cast<long>(p / W), px = static_cast<long>(p % W);
        for (long dy = -1; dy <= 1; ++dy)
          for (long dx = -1; dx <= 1; ++dx) {
            const long y = py + dy, x = px + dx;
            if (y < 0 || x < 0 || y >= static_cast<long>(H) || x >= static_cast<long>(W)) continue;
            const std::size_t q = static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x);
            if (m(q / W, q % W) && lab[q] < 0) {
              lab[q] = count;
              grew = true;
            }
          }
      }
    }
    ++count;
  }
  return lab;
}

/// Thresholds the maps at every distinct value (descending), recounts false
/// positives and per-region overlap from scratch, and integrates the step
/// curve that starts at (0, 0) and holds each point's overlap until the next
/// point's false-positive rate.
inline double pro_auc(const std::vector<PixelMap>& maps, double limit) {
  std::set<double, std::greater<>> thresholds;
  std::vector<std::vector<int>> labels;
  std::vector<int> counts;
  std::size_t negatives = 0;
  for (const auto& pm : maps) {
    int n = 0;
    labels.push_back(label_regions(pm.truth, n));
    counts.push_back(n);
    for (std::size_t i = 0; i < pm.map.size(); ++i) thresholds.insert(pm.map[i]);
    negatives += pm.truth.data().size() - pm.truth.count();
  }
  double prev_fpr = 0.0, prev_pro = 0.0, area = 0.0;
  for (double t : thresholds) {
    if (prev_fpr >= limit) break;
    std::size_t fp = 0;
    std::vector<double> overlaps;
    for (std::size_t k = 0; k < maps.size(); ++k) {
      const auto& pm = maps[k];
      std::vector<std::size_t> hit(static_cast<std::size_t>(counts[k]), 0), size(hit.size(), 0);
      for (std::size_t i = 0; i < pm.map.size(); ++i) {
        const int l = labels[k][i];
        const bool pred = pm.map[i] >= t;
        if (l < 0) {
          fp += pred;
        } else {
          ++size[static_cast<std::size_t>(l)];
          hit[static_cast<std::size_t>(l)] += pred;
        }
      }
      for (std::size_t r = 0; r < hit.size(); ++r)
        overlaps.push_back(static_cast<double>(hit[r]) / static_cast<double>(size[r]));
    }
    double pro = 0.0;
    for (double o : overlaps) pro += o;
    pro /= static_cast<double>(overlaps.size());
    const double fpr = negatives ? static_cast<double>(fp) / static_cast<double>(negatives) : 0.0;
    area += (std::min(fpr, limit) - prev_fpr) * prev_pro;
    prev_fpr = fpr;
    prev_pro = pro;
  }
  if (prev_fpr < limit) area += (limit - prev_fpr) * prev_pro;
  return area / limit;
}

/// Mean pairwise distance per cluster by enumerating ordered pairs i < j.
inline double intra_cluster(const std::vector<std::vector<Image>>& clusters, const PerceptualDistance& d) {
  double sum = 0.0;
  std::size_t used = 0;
  for (const auto& c : clusters) {
    if (c.size() < 2) continue;
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < c.size(); ++i)
      for (std::size_t j = i + 1; j < c.size(); ++j, ++n) s += d.distance(c[i], c[j]);
    sum += s / static_cast<double>(n);
    ++used;
  }
  return sum / static_cast<double>(used);
}

}  // namespace anomagic::oracle
