// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>

#include "anomagic/encoders.hpp"
#include "anomagic/errors.hpp"
#include "test_support.hpp"

namespace anomagic {
namespace {

TEST(ToyImageEncoder, GridShape) {
  ToyImageEncoder enc(8, 16, 7);
  Rng rng(0);
  const ImageFeatureMap f = enc.encode(testing::random_image(64, 64, rng));
  EXPECT_EQ(f.rows, 8u);
  EXPECT_EQ(f.cols, 8u);
  EXPECT_EQ(f.n_patches(), 64u);
  EXPECT_EQ(f.dim(), 16u);
  EXPECT_EQ(f.source_height, 64u);
}

TEST(ToyImageEncoder, IndivisibleSizeIsShapeError) {
  ToyImageEncoder enc(8, 16, 7);
  EXPECT_THROW(enc.encode(Image(30, 32)), ShapeError);
}

TEST(ToyImageEncoder, Deterministic) {
  ToyImageEncoder enc(8, 16, 7);
  Rng rng(1);
  const Image img = testing::random_image(32, 32, rng);
  EXPECT_TRUE(bitwise_equal(enc.encode(img).tokens, enc.encode(img).tokens));
  EXPECT_EQ(enc.checksum(), ToyImageEncoder(8, 16, 7).checksum());
  EXPECT_NE(enc.checksum(), ToyImageEncoder(8, 16, 8).checksum());
}

TEST(ToyImageEncoder, TokensArePatchLocal) {
  for (auto layer : {FeatureLayer::kFinal, FeatureLayer::kPenultimate}) {
    ToyImageEncoder enc(8, 16, 7, layer);
    Rng rng(2);
    Image a = testing::random_image(32, 32, rng);
    Image b = a;
    b.at(1, 13, 21) = 1.0 - b.at(1, 13, 21);  // inside patch (row 1, col 2)
    const Tensor ta = enc.encode(a).tokens, tb = enc.encode(b).tokens;
    for (std::size_t p = 0; p < 16; ++p) {
      bool same = true;
      for (std::size_t d = 0; d < 16; ++d) same = same && ta.at(p, d) == tb.at(p, d);
      EXPECT_EQ(same, p != 1 * 4 + 2) << "patch " << p;
    }
  }
}

TEST(ToyTextEncoder, MarkersAndLimit) {
  ToyTextEncoder enc(6, 16, 3);
  const auto toks = enc.tokenize("a  b\tc");
  ASSERT_EQ(toks.size(), 5u);
  EXPECT_EQ(toks.front(), ToyTextEncoder::kBegin);
  EXPECT_EQ(toks.back(), ToyTextEncoder::kEnd);
  EXPECT_NO_THROW(enc.encode_segment("a b c d"));
  EXPECT_THROW(enc.encode_segment("a b c d e"), RangeError);
}

TEST(ToyTextEncoder, EmptyStringIsDefined) {
  ToyTextEncoder enc(77, 16, 3);
  const Tensor e = enc.encode_segment("");
  EXPECT_EQ(e.size(), 16u);
  EXPECT_TRUE(e.all_finite());
}

TEST(ToyTextEncoder, DeterministicAndInjectiveOnTokens) {
  ToyTextEncoder enc(77, 16, 3);
  EXPECT_TRUE(bitwise_equal(enc.encode_segment("abc"), enc.encode_segment("abc")));
  EXPECT_FALSE(bitwise_equal(enc.encode_segment("abc"), enc.encode_segment("abd")));
}

TEST(ToyTextEncoder, SegmentIsMeanOfTokenEmbeddings) {
  ToyTextEncoder enc(77, 4, 3);
  // mean(e_B, x, y, e_E) * 4 == (mean(e_B, x, e_E) * 3) + (mean(e_B, y, e_E) * 3) - (e_B + e_E)
  const Tensor xy = enc.encode_segment("x y"), x = enc.encode_segment("x"), y = enc.encode_segment("y"),
               none = enc.encode_segment("");
  for (std::size_t d = 0; d < 4; ++d) {
    EXPECT_NEAR(4 * xy[d], 3 * x[d] + 3 * y[d] - 2 * none[d], 1e-12);
  }
}

TEST(Registry, ToyEntry) {
  ModelRegistry reg;
  EXPECT_TRUE(reg.contains("toy"));
  const EncoderPair p = reg.create("toy");
  EXPECT_EQ(p.image->patch_size(), 8u);
  EXPECT_EQ(p.image->feature_dim(), 16u);
  EXPECT_EQ(p.text->token_limit(), 77u);
  EXPECT_THROW(reg.create("nope"), ConfigError);
}

TEST(Registry, FromFileAndExternal) {
  const auto dir = testing::scratch_dir("registry");
  std::ofstream(dir / "reg.json")
      << R"({"small": {"kind": "toy", "patch_size": 4, "D_feat": 8, "token_limit": 10, "D_text": 8, "seed": 1},
             "ext": {"kind": "external", "weight_path": "w.bin"}})";
  ModelRegistry reg = ModelRegistry::from_file(dir / "reg.json");
  EXPECT_EQ(reg.create("small").image->patch_size(), 4u);
  EXPECT_EQ(reg.create("small").text->token_limit(), 10u);
  EXPECT_THROW(reg.create("ext"), ConfigError);
  ModelRegistry::register_external("ext", [](const EncoderSpec&) {
    return EncoderPair{std::make_shared<ToyImageEncoder>(2, 4, 0), std::make_shared<ToyTextEncoder>(5, 4, 0)};
  });
  EXPECT_EQ(reg.create("ext").image->patch_size(), 2u);
}

}  // namespace
}  // namespace anomagic
