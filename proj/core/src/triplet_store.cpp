// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#include "anomagic/triplet_store.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "anomagic/clients.hpp"
#include "anomagic/errors.hpp"

namespace anomagic {

namespace {

using nlohmann::json;

std::string require_string(const json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(std::string("missing field '") + key + "'", line);
  if (!it->is_string()) throw ParseError(std::string("field '") + key + "' is not a string", line);
  return it->get<std::string>();
}

std::string optional_string(const json& j, const char* key, std::string fallback, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_string()) throw ParseError(std::string("field '") + key + "' is not a string", line);
  return it->get<std::string>();
}

json to_json(const Triplet& t, const std::string& schema_version) {
  return json{{"schema_version", schema_version},
              {"id", t.id},
              {"image", t.image.generic_string()},
              {"mask", t.mask.generic_string()},
              {"caption", t.caption},
              {"category", t.category},
              {"defect_type", t.defect_type},
              {"source_dataset", t.source_dataset},
              {"domain", t.domain},
              {"split", std::string(to_string(t.split))}};
}

}  // namespace

std::string_view to_string(Split split) { return split == Split::kTrain ? "train" : "eval"; }

Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "eval") return Split::kEval;
  throw ValidationError("unknown split '" + std::string(s) + "' (expected train|eval)");
}

DatasetManifest::DatasetManifest(std::vector<Triplet> records, std::filesystem::path base_dir,
                                 std::string schema_version)
    : records_(std::move(records)),
      base_dir_(std::move(base_dir)),
      schema_version_(std::move(schema_version)) {
  std::set<std::string> seen;
  for (const auto& r : records_) {
    if (!seen.insert(r.id).second) throw IntegrityError("duplicate id '" + r.id + "'");
    ++domain_counts_[r.domain];
    ++defect_counts_[r.defect_type];
  }
}

const Triplet* DatasetManifest::find(std::string_view id) const {
  for (const auto& r : records_)
    if (r.id == id) return &r;
  return nullptr;
}

std::filesystem::path DatasetManifest::resolve(const std::filesystem::path& p) const {
  return p.is_absolute() || base_dir_.empty() ? p : base_dir_ / p;
}

Image DatasetManifest::load_image(const Triplet& t) const { return read_image(resolve(t.image)); }
Mask DatasetManifest::load_mask(const Triplet& t) const { return read_mask(resolve(t.mask)); }

DatasetManifest load_manifest(const std::filesystem::path& path, const ManifestLoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  std::vector<Triplet> records;
  std::string schema = std::string(kManifestSchemaVersion);
  std::set<std::string> ids;
  const auto base = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), lineno);
    }
    if (!j.is_object()) throw ParseError("record is not an object", lineno);
    const std::string version = require_string(j, "schema_version", lineno);
    if (records.empty()) {
      schema = version;
    } else if (version != schema) {
      throw ParseError("schema_version '" + version + "' differs from '" + schema + "'", lineno);
    }
    Triplet t;
    t.id = require_string(j, "id", lineno);
    t.image = require_string(j, "image", lineno);
    t.mask = require_string(j, "mask", lineno);
    t.caption = optional_string(j, "caption", "", lineno);
    t.category = require_string(j, "category", lineno);
    t.defect_type = require_string(j, "defect_type", lineno);
    t.source_dataset = optional_string(j, "source_dataset", "", lineno);
    t.domain = optional_string(j, "domain", "unspecified", lineno);
    try {
      t.split = parse_split(optional_string(j, "split", "train", lineno));
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), lineno);
    }
    if (t.id.empty()) throw ParseError("empty id", lineno);
    if (t.caption.empty() && !options.allow_uncaptioned) {
      throw IntegrityError("record '" + t.id + "' has an empty caption");
    }
    if (!ids.insert(t.id).second) throw IntegrityError("duplicate id '" + t.id + "'");

    const auto img_path = t.image.is_absolute() ? t.image : base / t.image;
    const auto mask_path = t.mask.is_absolute() ? t.mask : base / t.mask;
    if (!std::filesystem::exists(img_path)) {
      throw IntegrityError("record '" + t.id + "': image file '" + img_path.string() + "' not found");
    }
    if (!std::filesystem::exists(mask_path)) {
      throw IntegrityError("record '" + t.id + "': mask file '" + mask_path.string() + "' not found");
    }
    if (options.check_contents) {
      if (png_size(img_path) != png_size(mask_path)) {
        throw IntegrityError("record '" + t.id + "': mask size differs from image size");
      }
      if (t.split == Split::kTrain && !read_mask(mask_path).any()) {
        throw IntegrityError("record '" + t.id + "': train mask has no foreground");
      }
    }
    records.push_back(std::move(t));
  }
  return DatasetManifest(std::move(records), base, schema);
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  for (const auto& r : manifest.records()) out << to_json(r, manifest.schema_version()).dump() << '\n';
}

BoundingBox mask_to_bbox(const Mask& mask) {
  bool found = false;
  BoundingBox box;
  for (std::size_t y = 0; y < mask.height(); ++y)
    for (std::size_t x = 0; x < mask.width(); ++x) {
      if (!mask(y, x)) continue;
      if (!found) {
        box = {x, y, x, y};
        found = true;
      } else {
        box.x_min = std::min(box.x_min, x);
        box.x_max = std::max(box.x_max, x);
        box.y_min = std::min(box.y_min, y);
        box.y_max = std::max(box.y_max, y);
      }
    }
  if (!found) throw DomainError("empty mask");
  return box;
}

std::string render_caption_template(std::string_view object_desc, std::string_view defect_type,
                                    std::string_view location, std::string_view detail,
                                    std::string_view features) {
  const std::pair<std::string_view, std::string_view> slots[] = {
      {"object description", object_desc}, {"type of defect", defect_type},
      {"location description", location},  {"detailed description", detail},
      {"notable features", features}};
  for (std::size_t i = 0; i < std::size(slots); ++i) {
    if (slots[i].second.empty()) {
      throw ValidationError("caption slot " + std::to_string(i + 1) + " (" +
                            std::string(slots[i].first) + ") is empty");
    }
  }
  std::string out;
  out.reserve(128 + object_desc.size() + defect_type.size() + location.size() + detail.size() +
              features.size());
  out.append("The image depicts ").append(object_desc);
  out.append(", with a ").append(defect_type);
  out.append(" observed ").append(location);
  out.append(". The defect is characterized by ").append(detail);
  out.append(" and exhibits ").append(features).append(".");
  return out;
}

std::string caption_template_hint() {
  return "The image depicts [general description of the object], with a [type of defect] "
         "observed [location description]. The defect is characterized by [detailed "
         "description] and exhibits [notable features].";
}

Image draw_bbox_overlay(const Image& image, const BoundingBox& box, std::size_t stroke) {
  Image out = image;
  const double red[3] = {1.0, 0.0, 0.0};
  for (std::size_t y = box.y_min; y <= box.y_max && y < image.height(); ++y)
    for (std::size_t x = box.x_min; x <= box.x_max && x < image.width(); ++x) {
      const bool border = y < box.y_min + stroke || y + stroke > box.y_max ||
                          x < box.x_min + stroke || x + stroke > box.x_max;
      if (!border) continue;
      for (std::size_t c = 0; c < 3; ++c) out.at(c, y, x) = red[c];
    }
  return out;
}

CaptionRun caption_triplets(const DatasetManifest& manifest, CaptioningClient& client,
                            const CaptionOptions& options) {
  CaptionRun run;
  std::vector<Triplet> records = manifest.records();
  for (auto& r : records) {
    if (!r.caption.empty() && !options.force) {
      ++run.skipped;
      continue;
    }
    try {
      const Image image = manifest.load_image(r);
      const BoundingBox box = mask_to_bbox(manifest.load_mask(r));
      CaptionRequest req;
      req.id = r.id;
      req.bbox = box;
      req.template_text = caption_template_hint();
      if (options.presentation == BoxPresentation::kOverlay) {
        req.image_png = encode_png(draw_bbox_overlay(image, box));
      } else {
        req.image_png = encode_png(image);
        std::ostringstream os;
        os << " The defect lies inside the box x=[" << box.x_min << ',' << box.x_max << "], y=["
           << box.y_min << ',' << box.y_max << "].";
        req.template_text += os.str();
      }
      ++run.client_calls;
      std::string caption = client.submit(req);
      if (caption.empty()) throw ClientError("client returned an empty caption");
      r.caption = std::move(caption);
    } catch (const std::exception& e) {
      run.failures.push_back({r.id, e.what()});
    }
  }
  run.manifest = DatasetManifest(std::move(records), manifest.base_dir(), manifest.schema_version());
  return run;
}

std::vector<CountShare> shares(const std::map<std::string, std::size_t>& counts) {
  std::size_t total = 0;
  for (const auto& [_, c] : counts) total += c;
  std::vector<CountShare> out;
  for (const auto& [name, c] : counts) {
    out.push_back({name, c, total ? 100.0 * static_cast<double>(c) / static_cast<double>(total) : 0.0});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const CountShare& a, const CountShare& b) { return a.count > b.count; });
  return out;
}

DatasetStats dataset_stats(const DatasetManifest& manifest) {
  DatasetStats s;
  s.total = manifest.size();
  s.domains = shares(manifest.domain_counts());
  s.defect_ranking = shares(manifest.defect_counts());
  return s;
}

}  // namespace anomagic
