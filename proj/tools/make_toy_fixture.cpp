// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

// Writes the 16-triplet toy dataset: smooth periodic textures with one
// disk-shaped defect each, the matching normal images, and a manifest.
//
//   make_toy_fixture <out_dir>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "anomagic/triplet_store.hpp"

namespace {

using anomagic::Image;
using anomagic::Mask;

struct DefectKind {
  const char* name;
  double rgb[3];
  const char* detail;
  const char* features;
};

constexpr DefectKind kDefects[] = {
    {"hole", {0.10, 0.05, 0.05}, "a dark circular cavity", "a sharp rim"},
    {"stain", {0.90, 0.80, 0.20}, "a bright yellow blotch", "a saturated tone"},
    {"discoloration", {0.20, 0.20, 0.70}, "a bluish patch", "a uniform hue shift"},
};

struct Object {
  const char* category;
  const char* domain;
  const char* description;
};

constexpr Object kObjects[] = {
    {"tile", "industrial", "a ceramic tile with a wavy glaze"},
    {"fabric", "textiles", "a woven fabric swatch"},
    {"capsule", "medicine", "a pharmaceutical capsule surface"},
    {"pcb", "electronics", "a printed circuit board region"},
};

const char* location(int cx, int cy, int size) {
  const int third = size / 3;
  const bool top = cy < third, bottom = cy >= 2 * third;
  const bool left = cx < third, right = cx >= 2 * third;
  if (!top && !bottom && !left && !right) return "near the center";
  if (top) return left ? "in the upper left" : right ? "in the upper right" : "near the top edge";
  if (bottom) return left ? "in the lower left" : right ? "in the lower right" : "near the bottom edge";
  return left ? "near the left edge" : "near the right edge";
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: %s <out_dir>\n", argv[0]);
    return 2;
  }
  namespace fs = std::filesystem;
  const fs::path out = argv[1];
  constexpr int kSize = 32;
  constexpr int kCount = 16;
  std::mt19937_64 rng(20260101);
  std::uniform_int_distribution<int> centre(6, 25);
  std::uniform_int_distribution<int> radius(2, 4);

  std::vector<anomagic::Triplet> records;
  for (int i = 0; i < kCount; ++i) {
    Image normal(kSize, kSize);
    for (int y = 0; y < kSize; ++y)
      for (int x = 0; x < kSize; ++x) {
        normal.at(0, y, x) = 0.5 + 0.2 * std::sin((x + i) * 0.4);
        normal.at(1, y, x) = 0.5 + 0.2 * std::cos(y * 0.3 + i * 0.2);
        normal.at(2, y, x) = 0.4 + 0.1 * std::sin((x + y) * 0.2);
      }
    normal = normal.quantized();
    const int cx = centre(rng), cy = centre(rng), r = radius(rng);
    const DefectKind& d = kDefects[i % 3];
    const Object& o = kObjects[i % 4];
    Mask mask(kSize, kSize);
    Image anomaly = normal;
    for (int y = 0; y < kSize; ++y)
      for (int x = 0; x < kSize; ++x) {
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) > r * r) continue;
        mask.set(y, x, true);
        for (int c = 0; c < 3; ++c) anomaly.at(c, y, x) = d.rgb[c];
      }
    char id[32];
    std::snprintf(id, sizeof(id), "toy-%02d", i);
    anomagic::write_image(out / "normal" / (std::string(id) + ".png"), normal);
    anomagic::write_image(out / "images" / (std::string(id) + ".png"), anomaly.quantized());
    anomagic::write_mask(out / "masks" / (std::string(id) + ".png"), mask);

    anomagic::Triplet t;
    t.id = id;
    t.image = fs::path("images") / (std::string(id) + ".png");
    t.mask = fs::path("masks") / (std::string(id) + ".png");
    t.category = o.category;
    t.defect_type = d.name;
    t.source_dataset = "toy";
    t.domain = o.domain;
    t.split = anomagic::Split::kTrain;
    t.caption = anomagic::render_caption_template(o.description, d.name, location(cx, cy, kSize),
                                                  d.detail, d.features);
    records.push_back(std::move(t));
  }
  anomagic::write_manifest(anomagic::DatasetManifest(std::move(records)), out / "manifest.jsonl");
  std::printf("wrote %d triplets to %s\n", kCount, out.string().c_str());
  return 0;
}
