// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>

#include "anomagic/clients.hpp"
#include "anomagic/errors.hpp"
#include "anomagic/triplet_store.hpp"
#include "test_support.hpp"

namespace anomagic {
namespace {

namespace fs = std::filesystem;
using testing::scratch_dir;

// Writes an 8x8 image/mask pair and returns its record.
Triplet make_record(const fs::path& dir, const std::string& id, const std::string& defect,
                    const std::string& domain = "industrial") {
  Image img(8, 8, 0.5);
  Mask m(8, 8);
  m.set(2, 3, true);
  write_image(dir / (id + ".png"), img);
  write_mask(dir / (id + "_mask.png"), m);
  Triplet t;
  t.id = id;
  t.image = id + ".png";
  t.mask = id + "_mask.png";
  t.caption = "caption of " + id;
  t.category = "widget";
  t.defect_type = defect;
  t.source_dataset = "unit";
  t.domain = domain;
  return t;
}

void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
  std::ofstream out(p);
  for (const auto& l : lines) out << l << '\n';
}

TEST(Manifest, EmptyFileHasNoRecords) {
  const auto dir = scratch_dir("manifest-empty");
  write_lines(dir / "m.jsonl", {});
  const DatasetManifest m = load_manifest(dir / "m.jsonl");
  EXPECT_TRUE(m.empty());
  EXPECT_TRUE(m.defect_counts().empty());
  EXPECT_TRUE(m.domain_counts().empty());
}

TEST(Manifest, CountsRecomputedFromRecords) {
  const auto dir = scratch_dir("manifest-counts");
  std::vector<Triplet> recs{make_record(dir, "a", "crack"), make_record(dir, "b", "crack"),
                            make_record(dir, "c", "hole")};
  write_manifest(DatasetManifest(recs, dir), dir / "m.jsonl");
  const DatasetManifest m = load_manifest(dir / "m.jsonl");
  ASSERT_EQ(m.defect_counts().size(), 2u);
  EXPECT_EQ(m.defect_counts().at("crack") + m.defect_counts().at("hole"), 3u);
}

TEST(Manifest, RoundTripIsFieldwiseEqual) {
  const auto dir = scratch_dir("manifest-roundtrip");
  std::vector<Triplet> recs{make_record(dir, "a", "crack", "textiles"), make_record(dir, "b", "hole")};
  recs[1].split = Split::kEval;
  write_manifest(DatasetManifest(recs, dir), dir / "m.jsonl");
  const DatasetManifest first = load_manifest(dir / "m.jsonl");
  write_manifest(first, dir / "m2.jsonl");
  EXPECT_EQ(load_manifest(dir / "m2.jsonl"), first);
  EXPECT_EQ(first.records(), recs);
}

TEST(Manifest, ToyFixtureLoads) {
  const DatasetManifest m = load_manifest(testing::toy_dir() / "manifest.jsonl");
  EXPECT_EQ(m.size(), 16u);
  for (const auto& t : m.records()) {
    EXPECT_FALSE(t.caption.empty());
    EXPECT_TRUE(m.load_mask(t).any());
  }
}

TEST(Manifest, MissingMaskNamesTheRecord) {
  const auto dir = scratch_dir("manifest-missing");
  auto t = make_record(dir, "lost", "crack");
  write_manifest(DatasetManifest({t}, dir), dir / "m.jsonl");
  fs::remove(dir / "lost_mask.png");
  try {
    load_manifest(dir / "m.jsonl");
    FAIL() << "expected IntegrityError";
  } catch (const IntegrityError& e) {
    EXPECT_NE(std::string(e.what()).find("lost"), std::string::npos);
  }
}

TEST(Manifest, DuplicateIdsRejected) {
  const auto dir = scratch_dir("manifest-dup");
  auto t = make_record(dir, "a", "crack");
  EXPECT_THROW(DatasetManifest({t, t}, dir), IntegrityError);
}

TEST(Manifest, MalformedLineNamesLineNumber) {
  const auto dir = scratch_dir("manifest-bad");
  auto t = make_record(dir, "a", "crack");
  write_manifest(DatasetManifest({t}, dir), dir / "m.jsonl");
  std::ifstream in(dir / "m.jsonl");
  std::string good;
  std::getline(in, good);
  write_lines(dir / "bad.jsonl", {good, "{not json"});
  try {
    load_manifest(dir / "bad.jsonl");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Manifest, UncaptionedNeedsOptIn) {
  const auto dir = scratch_dir("manifest-uncaptioned");
  auto t = make_record(dir, "a", "crack");
  t.caption.clear();
  write_manifest(DatasetManifest({t}, dir), dir / "m.jsonl");
  EXPECT_THROW(load_manifest(dir / "m.jsonl"), IntegrityError);
  ManifestLoadOptions opt;
  opt.allow_uncaptioned = true;
  EXPECT_EQ(load_manifest(dir / "m.jsonl", opt).size(), 1u);
}

TEST(BoundingBox, SinglePixel) {
  Mask m(8, 8);
  m.set(4, 3, true);  // (x=3, y=4)
  EXPECT_EQ(mask_to_bbox(m), (BoundingBox{3, 4, 3, 4}));
}

TEST(BoundingBox, FullMask) { EXPECT_EQ(mask_to_bbox(Mask(8, 8, true)), (BoundingBox{0, 0, 7, 7})); }

TEST(BoundingBox, TwoPixels) {
  Mask m(8, 8);
  m.set(2, 1, true);
  m.set(3, 5, true);
  EXPECT_EQ(mask_to_bbox(m), (BoundingBox{1, 2, 5, 3}));
}

TEST(BoundingBox, EmptyMaskIsDomainError) {
  try {
    mask_to_bbox(Mask(4, 4));
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_STREQ(e.what(), "empty mask");
  }
}

TEST(BoundingBox, MatchesBruteForceOnRandomMasks) {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t h = 1 + rng() % 20, w = 1 + rng() % 20;
    Mask m = testing::random_mask(h, w, 0.05 + 0.2 * (trial % 4), rng);
    if (!m.any()) m.set(rng() % h, rng() % w, true);
    BoundingBox b{w, h, 0, 0};
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        if (m(y, x)) {
          b.x_min = std::min(b.x_min, x);
          b.y_min = std::min(b.y_min, y);
          b.x_max = std::max(b.x_max, x);
          b.y_max = std::max(b.y_max, y);
        }
    EXPECT_EQ(mask_to_bbox(m), b);
  }
}

TEST(CaptionTemplate, CashewExample) {
  EXPECT_EQ(render_caption_template("a cashew nut", "crack", "near the center", "a thin fissure", "jagged edges"),
            "The image depicts a cashew nut, with a crack observed near the center. The defect is "
            "characterized by a thin fissure and exhibits jagged edges.");
}

TEST(CaptionTemplate, EmptySlotNamesTheSlot) {
  try {
    render_caption_template("x", "y", "z", "w", "");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("5"), std::string::npos);
  }
}

TEST(CaptionTemplate, EverySlotAppearsAndMatters) {
  const std::vector<std::string> slots{"obj", "dent", "at the rim", "a shallow dip", "soft shading"};
  const std::string base = render_caption_template(slots[0], slots[1], slots[2], slots[3], slots[4]);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NE(base.find(slots[i]), std::string::npos);
    auto changed = slots;
    changed[i] += "!";
    EXPECT_NE(render_caption_template(changed[0], changed[1], changed[2], changed[3], changed[4]), base);
  }
}

TEST(Overlay, RedBorderOnCopy) {
  Image img(10, 10, 0.5);
  const Image out = draw_bbox_overlay(img, {2, 2, 7, 7}, 1);
  EXPECT_EQ(img.at(0, 2, 2), 0.5);
  EXPECT_EQ(out.at(0, 2, 2), 1.0);
  EXPECT_EQ(out.at(1, 2, 2), 0.0);
  EXPECT_EQ(out.at(0, 4, 4), 0.5);  // interior untouched
}

TEST(Captioning, MockEchoesIds) {
  const auto dir = scratch_dir("caption-mock");
  std::vector<Triplet> recs{make_record(dir, "a", "crack"), make_record(dir, "b", "hole")};
  for (auto& r : recs) r.caption.clear();
  MockCaptioningClient client;
  const CaptionRun run = caption_triplets(DatasetManifest(recs, dir), client);
  for (const auto& t : run.manifest.records()) EXPECT_EQ(t.caption, "CAP:" + t.id);
  EXPECT_TRUE(run.failures.empty());
}

TEST(Captioning, FailureIsRecordedAndPipelineContinues) {
  const auto dir = scratch_dir("caption-fail");
  std::vector<Triplet> recs{make_record(dir, "a", "crack"), make_record(dir, "b", "hole"),
                            make_record(dir, "c", "hole")};
  for (auto& r : recs) r.caption.clear();
  MockCaptioningClient client("CAP:", {"b"});
  const CaptionRun run = caption_triplets(DatasetManifest(recs, dir), client);
  ASSERT_EQ(run.failures.size(), 1u);
  EXPECT_EQ(run.failures[0].id, "b");
  EXPECT_EQ(run.manifest.find("a")->caption, "CAP:a");
  EXPECT_EQ(run.manifest.find("c")->caption, "CAP:c");
  EXPECT_TRUE(run.manifest.find("b")->caption.empty());
}

TEST(Captioning, RerunWithoutForceMakesNoCalls) {
  const auto dir = scratch_dir("caption-rerun");
  std::vector<Triplet> recs{make_record(dir, "a", "crack"), make_record(dir, "b", "hole")};
  for (auto& r : recs) r.caption.clear();
  MockCaptioningClient client;
  const CaptionRun first = caption_triplets(DatasetManifest(recs, dir), client);
  const std::size_t calls = client.calls();
  const CaptionRun second = caption_triplets(first.manifest, client);
  EXPECT_EQ(client.calls(), calls);
  EXPECT_EQ(second.client_calls, 0u);
  CaptionOptions force;
  force.force = true;
  caption_triplets(first.manifest, client, force);
  EXPECT_EQ(client.calls(), calls + 2);
}

TEST(Stats, DomainPercentages) {
  const auto s = shares({{"industrial", 565}, {"textiles", 236}, {"consumer", 87}, {"medicine", 59},
                         {"electronics", 53}});
  ASSERT_EQ(s.size(), 5u);
  const std::vector<std::pair<std::string, double>> want{
      {"industrial", 56.5}, {"textiles", 23.6}, {"consumer", 8.7}, {"medicine", 5.9}, {"electronics", 5.3}};
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(s[i].name, want[i].first);
    EXPECT_NEAR(s[i].percent, want[i].second, 1e-9);
  }
}

TEST(Stats, SingleRecordIsWholeShare) {
  const auto dir = scratch_dir("stats-single");
  const DatasetStats s = dataset_stats(DatasetManifest({make_record(dir, "a", "crack", "medicine")}, dir));
  ASSERT_EQ(s.domains.size(), 1u);
  EXPECT_EQ(s.domains[0].percent, 100.0);
}

TEST(Stats, DefectRanking) {
  const auto dir = scratch_dir("stats-rank");
  const DatasetStats s =
      dataset_stats(DatasetManifest({make_record(dir, "a", "type_b"), make_record(dir, "b", "type_a"),
                                     make_record(dir, "c", "type_a"), make_record(dir, "d", "type_a")},
                                    dir));
  ASSERT_EQ(s.defect_ranking.size(), 2u);
  EXPECT_EQ(s.defect_ranking[0].name, "type_a");
  EXPECT_EQ(s.defect_ranking[1].name, "type_b");
}

}  // namespace
}  // namespace anomagic
