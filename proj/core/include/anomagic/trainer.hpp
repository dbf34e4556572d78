// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "anomagic/model.hpp"
#include "anomagic/triplet_store.hpp"

namespace anomagic {

enum class MaskFill { kZeros, kNoise };
enum class LossNormalization { kMaskedMean, kGlobalMean };
/// Which image is noised: the masked input (as written in the training
/// algorithm) or the unmasked reference.
enum class NoiseTarget { kInput, kReference };

struct TrainConfig {
  std::size_t dilation_radius = 1;  // 8 px at 512, scaled to 32 px
  MaskFill mask_fill = MaskFill::kZeros;
  double learning_rate = 1e-4;
  std::size_t steps = 500;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  LossNormalization loss_normalization = LossNormalization::kMaskedMean;
  NoiseTarget noise_target = NoiseTarget::kInput;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::filesystem::path out_dir;     // empty: nothing written
};

/// Scales the 512 px default radius of 8 to another resolution.
std::size_t default_dilation_radius(std::size_t image_size);

/// "key = value" lines, '#' comments. Unknown keys raise ConfigError.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);
std::string format_train_config(const TrainConfig& config);

Mask dilate_mask(const Mask& mask, std::size_t radius);

/// Pixels under the mask replaced by zeros or by seeded uniform noise.
Image masked_input(const Image& image, const Mask& mask, MaskFill fill, Rng* rng = nullptr);

/// Squared masked residual. `m_lat` is latent-shaped or [1,h,w] (broadcast
/// over channels). Masked-mean divides by the number of masked elements
/// (0 when there are none); global-mean by the element count.
ad::Var masked_loss(const Tensor& eps, const ad::Var& eps_hat, const Tensor& m_lat,
                    LossNormalization normalization);

/// Decoupled-weight-decay Adam over named parameters.
class AdamW {
 public:
  AdamW(double lr, double beta1, double beta2, double eps, double weight_decay)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {}

  void step(const std::vector<std::pair<std::string, ad::Var>>& params);
  void set_learning_rate(double lr) noexcept { lr_ = lr; }
  std::size_t steps_taken() const noexcept { return t_; }
  const std::map<std::string, Tensor>& first_moments() const noexcept { return m_; }
  const std::map<std::string, Tensor>& second_moments() const noexcept { return v_; }

 private:
  double lr_, b1_, b2_, eps_, wd_;
  std::size_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

struct LossRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double wall_time = 0.0;  // seconds since training start
};

struct TrainState {
  std::size_t step = 0;
  std::vector<LossRecord> history;
  std::map<std::string, Tensor> adam_m, adam_v;
  std::vector<std::string> optimized;  // names in the optimizer's set
  std::string rng_state;
};

/// What one training sample looked like, for instrumentation.
struct TrainProbe {
  std::size_t step = 0;
  std::string triplet_id;
  Mask inpainting_mask;
  Image input;  // I_input
  Tensor z0;    // encoding that was noised
  Tensor eps;
  Tensor z_t;
  std::size_t t = 0;
};

struct TrainHooks {
  std::function<void(const TrainProbe&)> on_sample;
  std::function<void(const LossRecord&)> on_step;
};

/// One pass of the training algorithm over the manifest's train split,
/// optimizing exactly the adapter and CPE parameters.
TrainState train(const DatasetManifest& manifest, Model& model, const TrainConfig& config,
                 const TrainHooks& hooks = {});

/// Loss of one batch without an update, used by gradient checks.
ad::Var training_loss(const std::vector<const Triplet*>& batch, const DatasetManifest& manifest,
                      const Model& model, const TrainConfig& config, Rng& rng, std::size_t step,
                      const TrainHooks& hooks = {});

struct PretrainConfig {
  std::size_t steps = 3000;
  std::size_t batch_size = 8;
  double learning_rate = 3e-3;
  std::size_t warmup_steps = 100;  // linear warmup, then cosine decay to 10%
  /// Chance that a sample gets a random flat-colored ellipse pasted in, so
  /// the backbone sees uniform regions of arbitrary color.
  double blob_probability = 0.5;
  std::uint64_t seed = 0;
};

/// Stands in for loading pretrained backbone weights: fits every base
/// predictor parameter to denoise normal images under the null condition
/// with an empty mask channel. Adapters stay zero. Returns per-step losses.
std::vector<double> pretrain_backbone(Model& model, const std::vector<Image>& normals,
                                      const PretrainConfig& config);

void write_loss_history(const std::vector<LossRecord>& history, const std::filesystem::path& path);

}  // namespace anomagic
