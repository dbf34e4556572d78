// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "anomagic/diffusion.hpp"
#include "anomagic/encoders.hpp"
#include "anomagic/prompt_encoder.hpp"

namespace anomagic {

/// Everything needed to rebuild a model before loading weights.
struct ModelConfig {
  std::string encoder = "toy";
  CpeConfig cpe;
  PredictorConfig predictor;
  std::size_t timesteps = 50;
  double alpha_max = 0.99;
  double alpha_min = 0.02;
  std::size_t codec_factor = 2;
  std::size_t lora_rank = 4;
  double lora_scale = 1.0;
  std::vector<std::string> lora_targets;  // empty: every cross-attention projection
  ConditionWiring wiring = ConditionWiring::kReplace;
  std::uint64_t seed = 0;
};

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& json);

struct Model {
  ModelConfig config;
  EncoderPair encoders;
  std::shared_ptr<const LatentCodec> codec;
  NoiseSchedule schedule;
  CrossmodalPromptEncoder cpe;
  NoisePredictor predictor;

  /// Null condition used while pretraining the backbone: one zero token.
  ad::Var null_condition() const;
};

/// Fresh model with adapters attached (B = 0). Encoder widths must agree
/// with the registry entry.
Model build_model(const ModelConfig& config, const ModelRegistry& registry = {});

/// Segments: cpe, lora, predictor_base, schedule, codec.
Checkpoint to_checkpoint(const Model& model);
Model from_checkpoint(const Checkpoint& ckpt, const ModelRegistry& registry = {});

inline void save_model(const Model& model, const std::filesystem::path& path) {
  save_checkpoint(to_checkpoint(model), path);
}
inline Model load_model(const std::filesystem::path& path, const ModelRegistry& registry = {}) {
  return from_checkpoint(load_checkpoint(path), registry);
}

}  // namespace anomagic
