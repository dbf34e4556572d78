// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "anomagic/image.hpp"

namespace anomagic {

class CaptioningClient;

inline constexpr std::string_view kManifestSchemaVersion = "anomverse/1";

enum class Split { kTrain, kEval };

std::string_view to_string(Split split);
Split parse_split(std::string_view s);

/// One anomaly-mask-caption record. Image and mask are file references,
/// resolved relative to the manifest's directory.
struct Triplet {
  std::string id;
  std::filesystem::path image;
  std::filesystem::path mask;
  std::string caption;
  std::string category;
  std::string defect_type;
  std::string source_dataset;
  std::string domain = "unspecified";
  Split split = Split::kTrain;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

/// Inclusive pixel box.
struct BoundingBox {
  std::size_t x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  std::size_t width() const noexcept { return x_max - x_min + 1; }
  std::size_t height() const noexcept { return y_max - y_min + 1; }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

class DatasetManifest {
 public:
  DatasetManifest() = default;
  /// Builds counts from the records; throws IntegrityError on duplicate ids.
  DatasetManifest(std::vector<Triplet> records, std::filesystem::path base_dir = {},
                  std::string schema_version = std::string(kManifestSchemaVersion));

  const std::vector<Triplet>& records() const noexcept { return records_; }
  const std::string& schema_version() const noexcept { return schema_version_; }
  const std::filesystem::path& base_dir() const noexcept { return base_dir_; }
  const std::map<std::string, std::size_t>& domain_counts() const noexcept { return domain_counts_; }
  const std::map<std::string, std::size_t>& defect_counts() const noexcept { return defect_counts_; }

  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

  const Triplet* find(std::string_view id) const;
  std::filesystem::path resolve(const std::filesystem::path& p) const;

  Image load_image(const Triplet& t) const;
  Mask load_mask(const Triplet& t) const;

  friend bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
    return a.schema_version_ == b.schema_version_ && a.records_ == b.records_ &&
           a.domain_counts_ == b.domain_counts_ && a.defect_counts_ == b.defect_counts_;
  }

 private:
  std::vector<Triplet> records_;
  std::filesystem::path base_dir_;
  std::string schema_version_ = std::string(kManifestSchemaVersion);
  std::map<std::string, std::size_t> domain_counts_;
  std::map<std::string, std::size_t> defect_counts_;
};

struct ManifestLoadOptions {
  /// Records with an empty caption are accepted (input to captioning).
  bool allow_uncaptioned = false;
  /// Read image/mask headers to compare sizes, and train masks for foreground.
  bool check_contents = true;
};

/// One JSON object per line; blank lines are ignored.
DatasetManifest load_manifest(const std::filesystem::path& path,
                              const ManifestLoadOptions& options = {});
/// Writes records with paths exactly as stored (relative paths stay relative).
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

BoundingBox mask_to_bbox(const Mask& mask);

/// The structured caption template with five slots filled verbatim.
std::string render_caption_template(std::string_view object_desc, std::string_view defect_type,
                                    std::string_view location, std::string_view detail,
                                    std::string_view features);

/// The template with bracketed placeholders, sent to captioning models as the
/// textual hint.
std::string caption_template_hint();

/// Copy of `image` with a red rectangle of the given stroke drawn on the box
/// border (stroke grows inward).
Image draw_bbox_overlay(const Image& image, const BoundingBox& box, std::size_t stroke = 3);

enum class BoxPresentation { kOverlay, kCoordinates };

struct CaptionOptions {
  bool force = false;
  BoxPresentation presentation = BoxPresentation::kOverlay;
};

struct CaptionFailure {
  std::string id;
  std::string message;
};

struct CaptionRun {
  DatasetManifest manifest;
  std::vector<CaptionFailure> failures;
  std::size_t client_calls = 0;
  std::size_t skipped = 0;
};

CaptionRun caption_triplets(const DatasetManifest& manifest, CaptioningClient& client,
                            const CaptionOptions& options = {});

struct CountShare {
  std::string name;
  std::size_t count = 0;
  double percent = 0.0;
};

struct DatasetStats {
  std::size_t total = 0;
  std::vector<CountShare> domains;        // descending by count, then name
  std::vector<CountShare> defect_ranking;  // descending by count, then name
};

/// Percent share of each key, ordered by descending count.
std::vector<CountShare> shares(const std::map<std::string, std::size_t>& counts);

DatasetStats dataset_stats(const DatasetManifest& manifest);

}  // namespace anomagic
