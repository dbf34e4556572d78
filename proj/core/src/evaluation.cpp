// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#include "anomagic/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

#include "anomagic/errors.hpp"
#include "anomagic/morphology.hpp"
#include "anomagic/rng.hpp"

namespace anomagic {

// ---- toy models -----------------------------------------------------------

std::vector<std::string> ToyFeatureExtractor::feature_names() const {
  return {"mean_r", "mean_g", "mean_b", "std_r", "std_g", "std_b", "grad_x", "grad_y"};
}

std::vector<double> ToyFeatureExtractor::features(const Image& img) const {
  if (img.empty()) throw ShapeError("feature extraction on an empty image");
  const std::size_t h = img.height(), w = img.width();
  const double n = static_cast<double>(h * w);
  std::vector<double> f(8, 0.0);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0.0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) s += img.at(c, y, x);
    const double mean = s / n;
    double v = 0.0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) v += (img.at(c, y, x) - mean) * (img.at(c, y, x) - mean);
    f[c] = mean;
    f[3 + c] = std::sqrt(v / n);
  }
  auto gray = [&](std::size_t y, std::size_t x) {
    return (img.at(0, y, x) + img.at(1, y, x) + img.at(2, y, x)) / 3.0;
  };
  double gx = 0.0, gy = 0.0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x + 1 < w; ++x) gx += std::abs(gray(y, x + 1) - gray(y, x));
  for (std::size_t y = 0; y + 1 < h; ++y)
    for (std::size_t x = 0; x < w; ++x) gy += std::abs(gray(y + 1, x) - gray(y, x));
  f[6] = w > 1 ? gx / static_cast<double>(h * (w - 1)) : 0.0;
  f[7] = h > 1 ? gy / static_cast<double>((h - 1) * w) : 0.0;
  return f;
}

ToyClassifier::ToyClassifier(std::size_t num_classes, std::uint64_t seed, double temperature)
    : k_(num_classes), temperature_(temperature) {
  if (num_classes < 2) throw ValidationError("classifier needs at least two classes");
  if (!(temperature > 0.0)) throw ValidationError("classifier temperature must be positive");
  Rng rng(seed);
  const Tensor w = randn({num_classes, 9}, rng);
  w_.assign(num_classes, std::vector<double>(9));
  for (std::size_t k = 0; k < num_classes; ++k)
    for (std::size_t j = 0; j < 9; ++j) w_[k][j] = w.at(k, j);
}

std::vector<double> ToyClassifier::predict(const Image& image) const {
  const auto f = ToyFeatureExtractor().features(image);
  std::vector<double> logits(k_);
  for (std::size_t k = 0; k < k_; ++k) {
    double z = w_[k][8];
    for (std::size_t j = 0; j < 8; ++j) z += w_[k][j] * f[j];
    logits[k] = z / temperature_;
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double& z : logits) sum += (z = std::exp(z - mx));
  for (double& z : logits) z /= sum;
  return logits;
}

double ToyPerceptualDistance::distance(const Image& a, const Image& b) const {
  if (a.height() != b.height() || a.width() != b.width()) throw ShapeError("perceptual distance: sizes differ");
  const std::size_t ph = std::max<std::size_t>(1, a.height() / 2), pw = std::max<std::size_t>(1, a.width() / 2);
  const std::size_t sy = a.height() / ph, sx = a.width() / pw;
  auto feats = [&](const Image& img, std::size_t py, std::size_t px) {
    std::vector<double> f(5, 0.0);
    const double cells = static_cast<double>(sy * sx);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = py * sy; y < (py + 1) * sy; ++y)
        for (std::size_t x = px * sx; x < (px + 1) * sx; ++x) f[c] += img.at(c, y, x) / cells;
    auto gray = [&](std::size_t y, std::size_t x) {
      return (img.at(0, y, x) + img.at(1, y, x) + img.at(2, y, x)) / 3.0;
    };
    const std::size_t y0 = py * sy, x0 = px * sx;
    if (sx > 1) f[3] = gray(y0, x0 + 1) - gray(y0, x0);
    if (sy > 1) f[4] = gray(y0 + 1, x0) - gray(y0, x0);
    double norm = 0.0;
    for (double v : f) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (double& v : f) v /= norm;
    return f;
  };
  double total = 0.0;
  for (std::size_t py = 0; py < ph; ++py)
    for (std::size_t px = 0; px < pw; ++px) {
      const auto fa = feats(a, py, px), fb = feats(b, py, px);
      for (std::size_t j = 0; j < 5; ++j) total += (fa[j] - fb[j]) * (fa[j] - fb[j]);
    }
  return total / static_cast<double>(ph * pw);
}

// ---- generation metrics ---------------------------------------------------

double inception_score_from_probs(const std::vector<std::vector<double>>& probs, double eps) {
  if (probs.empty()) throw DomainError("inception score of an empty image set");
  const std::size_t k = probs[0].size();
  for (const auto& p : probs) {
    if (p.size() != k) throw ShapeError("probability vectors differ in length");
    double s = 0.0;
    for (double v : p) {
      if (!(v >= 0.0)) throw ValidationError("negative or non-finite class probability");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) throw ValidationError("class probabilities do not sum to 1");
  }
  std::vector<double> mean(k, 0.0);
  for (const auto& p : probs)
    for (std::size_t j = 0; j < k; ++j) mean[j] += p[j];
  for (double& m : mean) m /= static_cast<double>(probs.size());
  double kl_sum = 0.0;
  for (const auto& p : probs) {
    double kl = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (p[j] > 0.0) kl += p[j] * std::log((p[j] + eps) / (mean[j] + eps));
    }
    kl_sum += kl;
  }
  return std::exp(kl_sum / static_cast<double>(probs.size()));
}

double inception_score(const std::vector<Image>& images, const ClassifierAdapter& classifier, double eps) {
  if (images.empty()) throw DomainError("inception score of an empty image set");
  std::vector<std::vector<double>> probs;
  probs.reserve(images.size());
  for (const auto& img : images) probs.push_back(classifier.predict(img));
  return inception_score_from_probs(probs, eps);
}

double intra_cluster_lpips(const std::vector<std::vector<Image>>& clusters, const PerceptualDistance& distance,
                           std::vector<std::size_t>* skipped) {
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    const auto& imgs = clusters[c];
    if (imgs.size() < 2) {
      if (skipped) skipped->push_back(c);
      continue;
    }
    double d = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < imgs.size(); ++i)
      for (std::size_t j = i + 1; j < imgs.size(); ++j, ++pairs) d += distance.distance(imgs[i], imgs[j]);
    sum += d / static_cast<double>(pairs);
    ++used;
  }
  if (used == 0) throw DomainError("every cluster has fewer than two images");
  return sum / static_cast<double>(used);
}

// ---- detection metrics ----------------------------------------------------

namespace {

void check_finite(const std::vector<ScoredLabel>& items) {
  for (const auto& it : items) {
    if (!std::isfinite(it.score)) throw ValidationError("non-finite detection score");
    if (it.label != 0 && it.label != 1) throw ValidationError("labels must be 0 or 1");
  }
}

double f1(std::size_t tp, std::size_t fp, std::size_t fn) {
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

}  // namespace

double roc_auc(const std::vector<ScoredLabel>& items) {
  check_finite(items);
  std::vector<ScoredLabel> s = items;
  std::sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.score < b.score; });
  std::size_t pos = 0, neg = 0;
  for (const auto& it : s) (it.label ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw DomainError("roc_auc needs both classes");
  // For each tie group: positives beat every lower negative and half-beat
  // the negatives in the group. Twice the count stays an integer.
  std::size_t twice = 0, neg_below = 0;
  for (std::size_t i = 0; i < s.size();) {
    std::size_t j = i, gp = 0, gn = 0;
    for (; j < s.size() && s[j].score == s[i].score; ++j) (s[j].label ? gp : gn) += 1;
    twice += gp * (2 * neg_below + gn);
    neg_below += gn;
    i = j;
  }
  return static_cast<double>(twice) / 2.0 / static_cast<double>(pos * neg);
}

double max_f1(const std::vector<ScoredLabel>& items, std::size_t grid) {
  check_finite(items);
  std::vector<ScoredLabel> s = items;
  std::sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  std::size_t pos = 0;
  for (const auto& it : s) pos += it.label;
  if (pos == 0) throw DomainError("max_f1 needs at least one positive");
  double best = 0.0;
  std::size_t tp = 0, fp = 0, i = 0;
  if (grid == 0) {
    while (i < s.size()) {
      const double v = s[i].score;
      for (; i < s.size() && s[i].score == v; ++i) (s[i].label ? tp : fp) += 1;
      best = std::max(best, f1(tp, fp, pos - tp));
    }
    return best;
  }
  const double hi = s.front().score, lo = s.back().score;
  for (std::size_t g = 0; g < grid; ++g) {
    const double thr = grid == 1 ? lo : hi - (hi - lo) * static_cast<double>(g) / static_cast<double>(grid - 1);
    for (; i < s.size() && s[i].score >= thr; ++i) (s[i].label ? tp : fp) += 1;
    best = std::max(best, f1(tp, fp, pos - tp));
  }
  return best;
}

double pro_auc(const std::vector<PixelMap>& maps, double fpr_limit) {
  if (!(fpr_limit > 0.0 && fpr_limit <= 1.0)) throw ValidationError("fpr_limit must lie in (0, 1]");
  struct Px {
    double score;
    int region;  // -1: ground-truth negative
  };
  std::vector<Px> px;
  std::vector<std::size_t> region_size;
  std::size_t negatives = 0;
  for (const auto& pm : maps) {
    if (pm.map.ndim() != 2 || pm.map.dim(0) != pm.truth.height() || pm.map.dim(1) != pm.truth.width()) {
      throw ShapeError("anomaly map and ground-truth mask differ in resolution");
    }
    const Components cc = connected_components(pm.truth);
    const int base = static_cast<int>(region_size.size());
    for (std::size_t s : cc.sizes) region_size.push_back(s);
    const std::size_t w = pm.truth.width();
    for (std::size_t i = 0; i < cc.labels.size(); ++i) {
      const double v = pm.map.at(i / w, i % w);
      if (!std::isfinite(v)) throw ValidationError("non-finite anomaly map value");
      const int l = cc.labels[i];
      px.push_back({v, l < 0 ? -1 : base + l});
      if (l < 0) ++negatives;
    }
  }
  if (region_size.empty()) throw DomainError("pro_auc needs ground-truth foreground");
  std::sort(px.begin(), px.end(), [](const Px& a, const Px& b) { return a.score > b.score; });

  std::vector<std::size_t> hit(region_size.size(), 0);
  std::size_t fp = 0;
  double fpr_prev = 0.0, pro_prev = 0.0, area = 0.0;
  for (std::size_t i = 0; i < px.size() && fpr_prev < fpr_limit;) {
    const double v = px[i].score;
    for (; i < px.size() && px[i].score == v; ++i) {
      if (px[i].region < 0) {
        ++fp;
      } else {
        ++hit[static_cast<std::size_t>(px[i].region)];
      }
    }
    const double fpr = negatives ? static_cast<double>(fp) / static_cast<double>(negatives) : 0.0;
    double overlap = 0.0;
    for (std::size_t r = 0; r < hit.size(); ++r) {
      overlap += static_cast<double>(hit[r]) / static_cast<double>(region_size[r]);
    }
    overlap /= static_cast<double>(hit.size());
    area += (std::min(fpr, fpr_limit) - fpr_prev) * pro_prev;
    fpr_prev = fpr;
    pro_prev = overlap;
  }
  if (fpr_prev < fpr_limit) area += (fpr_limit - fpr_prev) * pro_prev;
  return area / fpr_limit;
}

double pixel_max_f1(const std::vector<PixelMap>& maps, std::size_t grid) {
  std::vector<ScoredLabel> items;
  for (const auto& pm : maps) {
    if (pm.map.ndim() != 2 || pm.map.dim(0) != pm.truth.height() || pm.map.dim(1) != pm.truth.width()) {
      throw ShapeError("anomaly map and ground-truth mask differ in resolution");
    }
    for (std::size_t y = 0; y < pm.truth.height(); ++y)
      for (std::size_t x = 0; x < pm.truth.width(); ++x) items.push_back({pm.map.at(y, x), pm.truth(y, x) ? 1 : 0});
  }
  return max_f1(items, grid);
}

DetectionReport evaluate_detection(const std::vector<ScoredLabel>& image_scores,
                                   const std::vector<PixelMap>& pixel_maps, double fpr_limit) {
  DetectionReport r;
  r.image_auroc = roc_auc(image_scores);
  r.image_f1 = max_f1(image_scores);
  if (!pixel_maps.empty()) {
    r.pro = pro_auc(pixel_maps, fpr_limit);
    r.pixel_f1 = pixel_max_f1(pixel_maps);
  }
  return r;
}

std::vector<GenerationRow> evaluate_generation(const std::vector<GeneratedSample>& samples,
                                               const ClassifierAdapter& classifier,
                                               const PerceptualDistance& distance) {
  if (samples.empty()) throw DomainError("no generated samples to evaluate");
  std::map<std::string, std::map<std::string, std::vector<Image>>> by_cat;
  for (const auto& s : samples) by_cat[s.category][s.defect_type].push_back(s.image);
  std::vector<GenerationRow> rows;
  GenerationRow mean{"mean", 0.0, 0.0, 0, false};
  std::size_t il_count = 0;
  for (const auto& [cat, clusters] : by_cat) {
    GenerationRow row{cat, 0.0, 0.0, 0, false};
    std::vector<Image> all;
    std::vector<std::vector<Image>> cl;
    for (const auto& [_, imgs] : clusters) {
      all.insert(all.end(), imgs.begin(), imgs.end());
      cl.push_back(imgs);
    }
    row.images = all.size();
    row.is = inception_score(all, classifier);
    try {
      row.il = intra_cluster_lpips(cl, distance);
      row.il_defined = true;
    } catch (const DomainError&) {
      row.il_defined = false;
    }
    mean.is += row.is;
    mean.images += row.images;
    if (row.il_defined) {
      mean.il += row.il;
      ++il_count;
    }
    rows.push_back(row);
  }
  mean.is /= static_cast<double>(rows.size());
  if (il_count) {
    mean.il /= static_cast<double>(il_count);
    mean.il_defined = true;
  }
  rows.push_back(mean);
  return rows;
}

std::vector<FeatureRow> export_features(const std::vector<LabeledImage>& images,
                                        const FeatureExtractor& extractor) {
  std::vector<FeatureRow> rows;
  rows.reserve(images.size());
  for (const auto& li : images) rows.push_back({li.id, li.group, extractor.features(li.image)});
  return rows;
}

void write_feature_table(const std::vector<FeatureRow>& rows, const std::vector<std::string>& names,
                         const std::filesystem::path& path, char delimiter) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write feature table '" + path.string() + "'");
  out << "id" << delimiter << "group";
  for (const auto& n : names) out << delimiter << n;
  out << '\n' << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& r : rows) {
    if (r.features.size() != names.size()) throw ShapeError("feature row width differs from the header");
    out << r.id << delimiter << r.group;
    for (double v : r.features) out << delimiter << v;
    out << '\n';
  }
}

}  // namespace anomagic
