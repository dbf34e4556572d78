// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "anomagic/image.hpp"

namespace anomagic {

/// Probability vector over `num_classes()` classes for an image.
class ClassifierAdapter {
 public:
  virtual ~ClassifierAdapter() = default;
  virtual std::size_t num_classes() const = 0;
  virtual std::vector<double> predict(const Image& image) const = 0;
};

/// Non-negative, symmetric, zero on identical inputs.
class PerceptualDistance {
 public:
  virtual ~PerceptualDistance() = default;
  virtual double distance(const Image& a, const Image& b) const = 0;
};

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::vector<std::string> feature_names() const = 0;
  virtual std::vector<double> features(const Image& image) const = 0;
};

/// Per-channel mean, per-channel population standard deviation, and mean
/// absolute horizontal and vertical differences of the gray image.
class ToyFeatureExtractor final : public FeatureExtractor {
 public:
  std::vector<std::string> feature_names() const override;
  std::vector<double> features(const Image& image) const override;
};

/// Softmax of a seeded linear map of the toy features.
class ToyClassifier final : public ClassifierAdapter {
 public:
  explicit ToyClassifier(std::size_t num_classes = 8, std::uint64_t seed = 11, double temperature = 0.1);
  std::size_t num_classes() const override { return k_; }
  std::vector<double> predict(const Image& image) const override;

 private:
  std::size_t k_;
  double temperature_;
  std::vector<std::vector<double>> w_;  // [k][features + 1]
};

/// LPIPS-like: 2x2 average-pooled colour and gradient features, unit
/// normalized per position, squared differences averaged over positions.
class ToyPerceptualDistance final : public PerceptualDistance {
 public:
  double distance(const Image& a, const Image& b) const override;
};

/// exp(mean_i KL(p_i || p_mean)) with eps added inside the logarithm.
double inception_score_from_probs(const std::vector<std::vector<double>>& probs, double eps = 1e-12);
double inception_score(const std::vector<Image>& images, const ClassifierAdapter& classifier,
                       double eps = 1e-12);

/// Mean over clusters of the mean pairwise distance within each cluster.
/// Clusters with fewer than two images are skipped and reported through
/// `skipped` (indices); raises DomainError if every cluster is skipped.
double intra_cluster_lpips(const std::vector<std::vector<Image>>& clusters, const PerceptualDistance& distance,
                           std::vector<std::size_t>* skipped = nullptr);

struct ScoredLabel {
  double score = 0.0;
  int label = 0;  // 1 = anomalous
};

/// Mann-Whitney statistic: P(s_pos > s_neg) + P(tie) / 2.
double roc_auc(const std::vector<ScoredLabel>& items);

/// Best F1 over thresholds at the observed scores (positive iff score >=
/// threshold). `grid` > 0 uses that many evenly spaced thresholds between
/// the minimum and maximum score instead.
double max_f1(const std::vector<ScoredLabel>& items, std::size_t grid = 0);

struct PixelMap {
  Tensor map;  // [H, W] anomaly scores
  Mask truth;
};

/// Area under the per-region-overlap curve up to `fpr_limit`, divided by
/// `fpr_limit`. Regions are 8-connected ground-truth components; overlap is
/// averaged over all regions of the set. The curve is the step function of
/// operating points at descending observed thresholds, starting at (0, 0).
double pro_auc(const std::vector<PixelMap>& maps, double fpr_limit = 0.3);

/// Max F1 over every pixel of the set.
double pixel_max_f1(const std::vector<PixelMap>& maps, std::size_t grid = 0);

struct DetectionReport {
  double image_auroc = 0.0;
  double image_f1 = 0.0;
  double pro = 0.0;
  double pixel_f1 = 0.0;
};

DetectionReport evaluate_detection(const std::vector<ScoredLabel>& image_scores,
                                   const std::vector<PixelMap>& pixel_maps, double fpr_limit = 0.3);

struct GeneratedSample {
  std::string category;
  std::string defect_type;
  Image image;
};

struct GenerationRow {
  std::string category;  // "mean" for the final row
  double is = 0.0;
  double il = 0.0;
  std::size_t images = 0;
  bool il_defined = false;
};

/// One row per category plus a trailing mean row. IS over each category's
/// images; IL over its (category, defect type) clusters.
std::vector<GenerationRow> evaluate_generation(const std::vector<GeneratedSample>& samples,
                                               const ClassifierAdapter& classifier,
                                               const PerceptualDistance& distance);

struct FeatureRow {
  std::string id;
  std::string group;  // normal, real-anomaly or synthetic
  std::vector<double> features;
};

struct LabeledImage {
  std::string id;
  std::string group;
  Image image;
};

std::vector<FeatureRow> export_features(const std::vector<LabeledImage>& images,
                                        const FeatureExtractor& extractor);
/// Header "id,group,<feature names>", one line per row, full precision.
void write_feature_table(const std::vector<FeatureRow>& rows, const std::vector<std::string>& names,
                         const std::filesystem::path& path, char delimiter = ',');

}  // namespace anomagic
