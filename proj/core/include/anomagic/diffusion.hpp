// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "anomagic/autograd.hpp"
#include "anomagic/image.hpp"
#include "anomagic/nn.hpp"

namespace anomagic {

/// Cumulative signal levels alpha_1..alpha_T (alpha_0 = 1 implicitly).
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  /// Rejects values outside (0, 1] and increasing sequences.
  explicit NoiseSchedule(std::vector<double> alphas);
  /// alpha linear in t from alpha_max at t=1 to alpha_min at t=T.
  static NoiseSchedule linear(std::size_t T, double alpha_max = 0.99, double alpha_min = 0.02);

  std::size_t T() const noexcept { return alphas_.size(); }
  /// alpha_t for 0 <= t <= T.
  double alpha(std::size_t t) const;
  const std::vector<double>& alphas() const noexcept { return alphas_; }

  friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;

 private:
  std::vector<double> alphas_;
};

/// z_t = sqrt(alpha_t) z_0 + sqrt(1 - alpha_t) eps, for 1 <= t <= T.
Tensor forward_noise(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& s);

/// Clean-latent estimate implied by a noise prediction at step t.
Tensor predict_z0(const Tensor& z_t, std::size_t t, const Tensor& eps_hat, const NoiseSchedule& s);

/// Deterministic DDIM update from t to t_prev (< t).
Tensor ddim_step(const Tensor& z_t, std::size_t t, std::size_t t_prev, const Tensor& eps_hat,
                 const NoiseSchedule& s);

/// Evenly spaced descending timesteps, first T, length `steps`.
std::vector<std::size_t> ddim_timesteps(std::size_t T, std::size_t steps);

using EpsFn = std::function<Tensor(const Tensor& z_t, std::size_t t)>;
/// Called after each step with the new latent and its timestep; may replace it.
using StepHook = std::function<Tensor(Tensor z, std::size_t t_prev)>;

Tensor sample(const EpsFn& eps, const Tensor& z_T, std::size_t steps, const NoiseSchedule& s,
              const StepHook& after_step = {});

/// z_gen * m + z_known_t * (1 - m), elementwise.
Tensor inpaint_blend(const Tensor& z_gen, const Tensor& z_known_t, const Tensor& m_lat);

enum class CodecKind { kIdentityDownsample, kLearned, kExternal };
std::string to_string(CodecKind kind);

/// Image <-> latent map. Latents are [C_lat, H/f, W/f].
class LatentCodec {
 public:
  virtual ~LatentCodec() = default;
  virtual CodecKind kind() const = 0;
  virtual std::size_t factor() const = 0;
  virtual std::size_t latent_channels() const = 0;
  virtual Tensor encode(const Image& image) const = 0;
  virtual Image decode(const Tensor& latent) const = 0;
  /// Latent-shaped 0/1 mask: an element is 1 iff any pixel feeding it is masked.
  virtual Tensor latent_mask(const Mask& pixel_mask) const = 0;
  /// Bound on max |decode(encode(I)) - I|.
  virtual double roundtrip_tolerance() const = 0;

  /// [1, H/f, W/f] any-pixel pooled mask, the predictor's mask channel.
  Tensor cell_mask(const Mask& pixel_mask) const;
};

/// Space-to-depth by factor f: each f x f pixel block becomes f*f*3 latent
/// channels at one latent position, so area shrinks f^2 times and decoding is
/// an exact inverse.
class IdentityCodec final : public LatentCodec {
 public:
  explicit IdentityCodec(std::size_t factor = 2);
  CodecKind kind() const override { return CodecKind::kIdentityDownsample; }
  std::size_t factor() const override { return f_; }
  std::size_t latent_channels() const override { return 3 * f_ * f_; }
  Tensor encode(const Image& image) const override;
  Image decode(const Tensor& latent) const override;
  Tensor latent_mask(const Mask& pixel_mask) const override;
  double roundtrip_tolerance() const override { return 0.0; }

 private:
  std::size_t f_;
};

struct PredictorConfig {
  std::size_t latent_channels = 12;
  /// Extra input channels concatenated after z_t (the cell mask).
  std::size_t extra_channels = 1;
  std::size_t width1 = 16;
  std::size_t width2 = 32;
  std::size_t cond_dim = 16;
  std::size_t heads = 4;
};

/// How P_c reaches the backbone's cross-attention.
enum class ConditionWiring { kReplace, kAlongsideNative };

/// Joins P_c with native conditioning tokens when wired alongside them.
ad::Var wire_condition(const ad::Var& p_c, const ad::Var* native, ConditionWiring wiring);

/// Two-level U-shaped noise predictor with three cross-attention layers
/// (down level 1, level 2, up level 1) consuming condition tokens. Input is
/// z_t concatenated with the extra channels; output has z_t's shape.
class NoisePredictor {
 public:
  NoisePredictor(PredictorConfig config, std::uint64_t seed);

  const PredictorConfig& config() const noexcept { return config_; }
  nn::ParameterStore& params() noexcept { return params_; }
  const nn::ParameterStore& params() const noexcept { return params_; }

  /// Names of every cross-attention projection ("unet.x1.q", ...).
  std::vector<std::string> cross_attention_projections() const;

  /// Adds zero-initialized adapters; freezes the base, marks A and B
  /// trainable. Unknown targets raise ConfigError.
  void apply_lora(const std::vector<std::string>& targets, std::size_t rank, double scale,
                  std::uint64_t seed, double a_init_std = 0.1);
  const std::vector<nn::LoraAdapter>& adapters() const noexcept { return adapters_; }
  /// Materializes W + s B A into the base weights and drops the adapters.
  void merge_lora();

  /// x: [C_lat + extra, h, w]; cond: [N, cond_dim]; returns [C_lat, h, w].
  ad::Var forward(const ad::Var& x, std::size_t t, const ad::Var& cond) const;

  /// Convenience for inference: concatenates z_t and extra, returns eps_hat.
  Tensor predict(const Tensor& z_t, const Tensor& extra, std::size_t t, const ad::Var& cond) const;

  /// Checksum of all non-adapter parameters.
  std::uint64_t base_checksum() const;

 private:
  ad::Var cross_attention(const std::string& prefix, const ad::Var& h, const ad::Var& cond) const;
  ad::Var time_embedding(const std::string& prefix, std::size_t t, std::size_t width) const;
  const nn::LoraAdapter* adapter_for(const std::string& target) const;

  PredictorConfig config_;
  nn::ParameterStore params_;
  std::vector<nn::LoraAdapter> adapters_;
};

/// Sinusoidal embedding of a timestep, [width] (width even).
Tensor timestep_embedding(std::size_t t, std::size_t width);

/// Named tensor segments plus a JSON metadata string and a format version.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::uint32_t version = kVersion;
  std::string metadata;  // JSON
  std::map<std::string, std::map<std::string, Tensor>> segments;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Selects parameters whose names start with `prefix`.
std::map<std::string, Tensor> select_prefix(const nn::ParameterStore& ps, const std::string& prefix);

}  // namespace anomagic
