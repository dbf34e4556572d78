// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "anomagic/errors.hpp"
#include "anomagic/morphology.hpp"
#include "anomagic/trainer.hpp"
#include "test_support.hpp"

namespace anomagic {
namespace {

TEST(TrainConfig, DefaultsAndParsing) {
  const TrainConfig d = parse_train_config("");
  EXPECT_EQ(d.dilation_radius, 1u);
  EXPECT_EQ(d.mask_fill, MaskFill::kZeros);
  EXPECT_EQ(d.noise_target, NoiseTarget::kInput);
  EXPECT_EQ(d.loss_normalization, LossNormalization::kMaskedMean);

  const TrainConfig c = parse_train_config(
      "# comment\nsteps = 12\nlearning_rate = 0.003  # trailing\nmask_fill = noise\nnoise_target = reference\n");
  EXPECT_EQ(c.steps, 12u);
  EXPECT_DOUBLE_EQ(c.learning_rate, 0.003);
  EXPECT_EQ(c.mask_fill, MaskFill::kNoise);
  EXPECT_EQ(c.noise_target, NoiseTarget::kReference);

  const TrainConfig back = parse_train_config(format_train_config(c));
  EXPECT_EQ(format_train_config(back), format_train_config(c));
}

TEST(TrainConfig, Errors) {
  EXPECT_THROW(parse_train_config("stpes = 3"), ConfigError);
  EXPECT_THROW(parse_train_config("steps 3"), ParseError);
  EXPECT_THROW(parse_train_config("steps = -3"), ConfigError);
  EXPECT_THROW(parse_train_config("steps = 0"), ConfigError);
  EXPECT_THROW(parse_train_config("learning_rate = fast"), ConfigError);
  EXPECT_THROW(parse_train_config("mask_fill = gray"), ConfigError);
  EXPECT_THROW(load_train_config("/nonexistent/train.cfg"), IoError);
}

TEST(Dilation, RadiusScalesWithResolution) {
  EXPECT_EQ(default_dilation_radius(512), 8u);
  EXPECT_EQ(default_dilation_radius(1024), 16u);
  EXPECT_EQ(default_dilation_radius(256), 4u);
  EXPECT_EQ(default_dilation_radius(32), 1u);
}

TEST(MaskedInput, FillsOnlyMaskedPixels) {
  Rng rng(1);
  const Image img = testing::random_image(16, 16, rng);
  const Mask m = testing::random_mask(16, 16, 0.3, rng);
  const Image z = masked_input(img, m, MaskFill::kZeros);
  Rng noise(2);
  const Image n = masked_input(img, m, MaskFill::kNoise, &noise);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x) {
        if (m(y, x)) {
          EXPECT_EQ(z.at(c, y, x), 0.0);
          EXPECT_GE(n.at(c, y, x), 0.0);
          EXPECT_LT(n.at(c, y, x), 1.0);
        } else {
          EXPECT_EQ(z.at(c, y, x), img.at(c, y, x));
          EXPECT_EQ(n.at(c, y, x), img.at(c, y, x));
        }
      }
  EXPECT_THROW(masked_input(img, m, MaskFill::kNoise), ConfigError);
  EXPECT_THROW(masked_input(img, Mask(8, 8), MaskFill::kZeros), ShapeError);
}

TEST(MaskedLoss, KnownValues) {
  const Tensor eps({2, 1, 2}, {1, 2, 3, 4});
  const ad::Var hat = ad::Var::constant(Tensor({2, 1, 2}, {0, 0, 0, 0}));
  const Tensor m({1, 1, 2}, {1, 0});
  // Masked elements: channel 0 and 1 at column 0, values 1 and 3.
  EXPECT_DOUBLE_EQ(masked_loss(eps, hat, m, LossNormalization::kMaskedMean).value()[0], (1.0 + 9.0) / 2.0);
  EXPECT_DOUBLE_EQ(masked_loss(eps, hat, m, LossNormalization::kGlobalMean).value()[0], (1.0 + 9.0) / 4.0);
  EXPECT_THROW(masked_loss(eps, hat, Tensor({1, 2, 2}), LossNormalization::kMaskedMean), ShapeError);
}

TEST(MaskedLoss, EmptyMaskGivesZeroLossAndGradient) {
  Rng rng(3);
  const Tensor eps = randn({3, 4, 4}, rng);
  ad::Var hat = ad::Var::leaf(randn({3, 4, 4}, rng), true);
  for (auto norm : {LossNormalization::kMaskedMean, LossNormalization::kGlobalMean}) {
    hat.zero_grad();
    const ad::Var l = masked_loss(eps, hat, Tensor({1, 4, 4}), norm);
    EXPECT_EQ(l.value()[0], 0.0);
    ad::backward(l);
    EXPECT_EQ(hat.grad().max_abs(), 0.0);
  }
}

TEST(MaskedLoss, GradientOnlyInsideMask) {
  Rng rng(4);
  const Tensor eps = randn({2, 3, 3}, rng);
  const Tensor m = testing::random_mask(3, 3, 0.5, rng).to_tensor();
  const double err = testing::gradient_error(
      [&](const ad::Var& x) { return masked_loss(eps, x, m, LossNormalization::kMaskedMean); }, randn({2, 3, 3}, rng));
  EXPECT_LT(err, 1e-6);
  ad::Var hat = ad::Var::leaf(randn({2, 3, 3}, rng), true);
  ad::backward(masked_loss(eps, hat, m, LossNormalization::kMaskedMean));
  const Tensor g = hat.grad();
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 9; ++i)
      if (m[i] == 0.0) EXPECT_EQ(g[c * 9 + i], 0.0);
}

TEST(AdamW, FirstStepMatchesClosedForm) {
  ad::Var p = ad::Var::leaf(Tensor({3}, {1.0, -2.0, 0.5}), true);
  const Tensor start = p.value();
  ad::backward(ad::sum(ad::square(p)));  // g = 2p
  AdamW opt(0.1, 0.9, 0.999, 1e-8, 0.01);
  opt.step({{"p", p}});
  for (std::size_t i = 0; i < 3; ++i) {
    const double g = 2 * start[i];
    const double want = start[i] - 0.1 * (g / (std::abs(g) + 1e-8) + 0.01 * start[i]);
    EXPECT_NEAR(p.value()[i], want, 1e-12);
  }
  EXPECT_EQ(opt.steps_taken(), 1u);
}

class Training : public ::testing::Test {
 protected:
  static DatasetManifest manifest() { return load_manifest(testing::toy_dir() / "manifest.jsonl"); }
  static Model model(std::uint64_t seed = 0) {
    ModelConfig cfg;
    cfg.seed = seed;
    return build_model(cfg);
  }
  static TrainConfig quick() {
    TrainConfig c;
    c.steps = 3;
    c.batch_size = 2;
    c.learning_rate = 1e-2;
    return c;
  }
};

TEST_F(Training, UpdatesOnlyAdaptersAndPromptEncoder) {
  Model m = model();
  const auto base = m.predictor.base_checksum();
  const auto img = m.encoders.image->checksum(), txt = m.encoders.text->checksum();
  const auto cpe = m.cpe.params().checksum();
  const auto lora = m.predictor.params().checksum([](const std::string& n) { return n.rfind("lora.", 0) == 0; });
  const TrainState s = train(manifest(), m, quick());
  EXPECT_EQ(m.predictor.base_checksum(), base);
  EXPECT_EQ(m.encoders.image->checksum(), img);
  EXPECT_EQ(m.encoders.text->checksum(), txt);
  EXPECT_NE(m.cpe.params().checksum(), cpe);
  EXPECT_NE(m.predictor.params().checksum([](const std::string& n) { return n.rfind("lora.", 0) == 0; }), lora);
  for (const auto& n : s.optimized) EXPECT_TRUE(n.rfind("lora.", 0) == 0 || n.rfind("cpe.", 0) == 0) << n;
  EXPECT_EQ(s.history.size(), 3u);
}

TEST_F(Training, SameSeedIsBitIdentical) {
  Model a = model(), b = model();
  const TrainState sa = train(manifest(), a, quick());
  const TrainState sb = train(manifest(), b, quick());
  for (std::size_t i = 0; i < sa.history.size(); ++i) EXPECT_EQ(sa.history[i].loss, sb.history[i].loss);
  EXPECT_EQ(a.predictor.params().checksum(), b.predictor.params().checksum());
  EXPECT_EQ(a.cpe.params().checksum(), b.cpe.params().checksum());
  EXPECT_EQ(sa.rng_state, sb.rng_state);
}

TEST_F(Training, SamplesFollowTheTrainingAlgorithm) {
  Model m = model();
  const DatasetManifest man = manifest();
  std::size_t seen = 0;
  TrainHooks hooks;
  hooks.on_sample = [&](const TrainProbe& p) {
    ++seen;
    const Triplet& t = *man.find(p.triplet_id);
    const Image img = man.load_image(t);
    const Mask mask = man.load_mask(t);
    EXPECT_EQ(p.inpainting_mask, dilate(mask, 1));
    EXPECT_TRUE(mask.subset_of(p.inpainting_mask));
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < img.height(); ++y)
        for (std::size_t x = 0; x < img.width(); ++x)
          EXPECT_EQ(p.input.at(c, y, x), p.inpainting_mask(y, x) ? 0.0 : img.at(c, y, x));
    EXPECT_TRUE(bitwise_equal(p.z0, m.codec->encode(p.input)));
    EXPECT_TRUE(bitwise_equal(p.z_t, forward_noise(p.z0, p.t, p.eps, m.schedule)));
    EXPECT_GE(p.t, 1u);
    EXPECT_LE(p.t, m.schedule.T());
  };
  train(man, m, quick(), hooks);
  EXPECT_EQ(seen, 6u);
}

TEST_F(Training, LossGradientMatchesFiniteDifferences) {
  Model m = model();
  Rng init(5);
  for (const auto& a : m.predictor.adapters()) {
    Tensor& b = m.predictor.params().get(a.b_name()).node()->value;
    b = randn(b.shape(), init, 0.05);
  }
  const DatasetManifest man = manifest();
  const std::vector<const Triplet*> batch{&man.records()[0], &man.records()[5]};
  TrainConfig cfg;
  auto loss = [&] {
    Rng rng(9);
    return training_loss(batch, man, m, cfg, rng, 1);
  };
  struct Probe {
    nn::ParameterStore* store;
    std::string name;
  };
  for (const Probe& p : {Probe{&m.predictor.params(), "lora.unet.x2.k.B"}, Probe{&m.predictor.params(), "lora.unet.x1.v.A"},
                         Probe{&m.cpe.params(), "cpe.fuse.weight"}, Probe{&m.cpe.params(), "cpe.q.weight"}}) {
    m.predictor.params().zero_grad();
    m.cpe.params().zero_grad();
    ad::backward(loss());
    const Tensor g = p.store->get(p.name).grad();
    Tensor& w = p.store->get(p.name).node()->value;
    double worst = 0.0;
    for (std::size_t i = 0; i < std::min<std::size_t>(w.size(), 24); ++i) {
      const double keep = w[i];
      w[i] = keep + 1e-6;
      const double up = loss().value()[0];
      w[i] = keep - 1e-6;
      const double down = loss().value()[0];
      w[i] = keep;
      const double num = (up - down) / 2e-6;
      worst = std::max(worst, std::abs(num - g[i]) / std::max({std::abs(num), std::abs(g[i]), 1e-4}));
    }
    EXPECT_LT(worst, 1e-4) << p.name;
  }
}

TEST_F(Training, RejectsStrayTrainableParameters) {
  Model m = model();
  m.predictor.params().set_trainable("unet.conv_in.weight", true);
  EXPECT_THROW(train(manifest(), m, quick()), TrainingError);
}

TEST_F(Training, WritesCheckpointsAndHistory) {
  Model m = model();
  TrainConfig c = quick();
  c.steps = 4;
  c.checkpoint_every = 2;
  c.out_dir = testing::scratch_dir("train");
  train(manifest(), m, c);
  EXPECT_TRUE(std::filesystem::exists(c.out_dir / "checkpoint-2.bin"));
  EXPECT_TRUE(std::filesystem::exists(c.out_dir / "checkpoint.bin"));
  EXPECT_TRUE(std::filesystem::exists(c.out_dir / "train_config.txt"));
  std::ifstream in(c.out_dir / "loss.jsonl");
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_EQ(lines, 4u);
  const Model back = load_model(c.out_dir / "checkpoint.bin");
  EXPECT_EQ(back.predictor.params().checksum(), m.predictor.params().checksum());
}

TEST(Pretrain, TouchesOnlyBaseAndRestoresFlags) {
  ModelConfig cfg;
  Model m = build_model(cfg);
  const auto trainable = m.predictor.params().trainable_names();
  const auto lora = m.predictor.params().checksum([](const std::string& n) { return n.rfind("lora.", 0) == 0; });
  const auto base = m.predictor.base_checksum();
  Rng rng(6);
  PretrainConfig pc;
  pc.steps = 3;
  pc.batch_size = 2;
  const auto hist = pretrain_backbone(m, {testing::random_image(32, 32, rng)}, pc);
  EXPECT_EQ(hist.size(), 3u);
  EXPECT_NE(m.predictor.base_checksum(), base);
  EXPECT_EQ(m.predictor.params().checksum([](const std::string& n) { return n.rfind("lora.", 0) == 0; }), lora);
  EXPECT_EQ(m.predictor.params().trainable_names(), trainable);
  EXPECT_THROW(pretrain_backbone(m, {}, pc), ConfigError);
}

}  // namespace
}  // namespace anomagic
