// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#include "anomagic/model.hpp"

#include <nlohmann/json.hpp>

#include "anomagic/errors.hpp"

namespace anomagic {

namespace {

using nlohmann::json;

const char* wiring_name(ConditionWiring w) {
  return w == ConditionWiring::kReplace ? "replace" : "alongside-native";
}

}  // namespace

std::string model_config_to_json(const ModelConfig& c) {
  json j{{"encoder", c.encoder},
         {"cpe",
          {{"d_feat", c.cpe.d_feat},
           {"d_attn", c.cpe.d_attn},
           {"d_text", c.cpe.d_text},
           {"d_cond", c.cpe.d_cond},
           {"heads", c.cpe.heads},
           {"penalty", c.cpe.penalty},
           {"allow_degenerate_mask", c.cpe.allow_degenerate_mask},
           {"restrict_queries", c.cpe.restrict_queries},
           {"pool_visual", c.cpe.pool_visual}}},
         {"predictor",
          {{"latent_channels", c.predictor.latent_channels},
           {"extra_channels", c.predictor.extra_channels},
           {"width1", c.predictor.width1},
           {"width2", c.predictor.width2},
           {"cond_dim", c.predictor.cond_dim},
           {"heads", c.predictor.heads}}},
         {"timesteps", c.timesteps},
         {"alpha_max", c.alpha_max},
         {"alpha_min", c.alpha_min},
         {"codec_factor", c.codec_factor},
         {"lora_rank", c.lora_rank},
         {"lora_scale", c.lora_scale},
         {"lora_targets", c.lora_targets},
         {"wiring", wiring_name(c.wiring)},
         {"seed", c.seed}};
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  ModelConfig c;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  try {
    c.encoder = j.value("encoder", c.encoder);
    if (j.contains("cpe")) {
      const auto& p = j["cpe"];
      c.cpe.d_feat = p.value("d_feat", c.cpe.d_feat);
      c.cpe.d_attn = p.value("d_attn", c.cpe.d_attn);
      c.cpe.d_text = p.value("d_text", c.cpe.d_text);
      c.cpe.d_cond = p.value("d_cond", c.cpe.d_cond);
      c.cpe.heads = p.value("heads", c.cpe.heads);
      c.cpe.penalty = p.value("penalty", c.cpe.penalty);
      c.cpe.allow_degenerate_mask = p.value("allow_degenerate_mask", c.cpe.allow_degenerate_mask);
      c.cpe.restrict_queries = p.value("restrict_queries", c.cpe.restrict_queries);
      c.cpe.pool_visual = p.value("pool_visual", c.cpe.pool_visual);
    }
    if (j.contains("predictor")) {
      const auto& p = j["predictor"];
      c.predictor.latent_channels = p.value("latent_channels", c.predictor.latent_channels);
      c.predictor.extra_channels = p.value("extra_channels", c.predictor.extra_channels);
      c.predictor.width1 = p.value("width1", c.predictor.width1);
      c.predictor.width2 = p.value("width2", c.predictor.width2);
      c.predictor.cond_dim = p.value("cond_dim", c.predictor.cond_dim);
      c.predictor.heads = p.value("heads", c.predictor.heads);
    }
    c.timesteps = j.value("timesteps", c.timesteps);
    c.alpha_max = j.value("alpha_max", c.alpha_max);
    c.alpha_min = j.value("alpha_min", c.alpha_min);
    c.codec_factor = j.value("codec_factor", c.codec_factor);
    c.lora_rank = j.value("lora_rank", c.lora_rank);
    c.lora_scale = j.value("lora_scale", c.lora_scale);
    c.lora_targets = j.value("lora_targets", c.lora_targets);
    const std::string w = j.value("wiring", std::string("replace"));
    if (w == "replace") {
      c.wiring = ConditionWiring::kReplace;
    } else if (w == "alongside-native") {
      c.wiring = ConditionWiring::kAlongsideNative;
    } else {
      throw ConfigError("unknown wiring '" + w + "'");
    }
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

ad::Var Model::null_condition() const {
  return ad::Var::constant(Tensor::zeros({1, config.predictor.cond_dim}));
}

Model build_model(const ModelConfig& config, const ModelRegistry& registry) {
  EncoderPair enc = registry.create(config.encoder);
  if (enc.image->feature_dim() != config.cpe.d_feat) {
    throw ConfigError("encoder D_feat " + std::to_string(enc.image->feature_dim()) +
                      " differs from CPE d_feat " + std::to_string(config.cpe.d_feat));
  }
  if (enc.text->embedding_dim() != config.cpe.d_text) {
    throw ConfigError("text encoder width differs from CPE d_text");
  }
  if (config.predictor.cond_dim != config.cpe.d_cond) {
    throw ConfigError("predictor cond_dim must equal CPE d_cond");
  }
  auto codec = std::make_shared<IdentityCodec>(config.codec_factor);
  if (codec->latent_channels() != config.predictor.latent_channels) {
    throw ConfigError("predictor latent_channels must equal the codec's " +
                      std::to_string(codec->latent_channels()));
  }
  Model m{config,
          std::move(enc),
          codec,
          NoiseSchedule::linear(config.timesteps, config.alpha_max, config.alpha_min),
          CrossmodalPromptEncoder(config.cpe, derive_seed(config.seed, 1)),
          NoisePredictor(config.predictor, derive_seed(config.seed, 2))};
  const auto targets =
      config.lora_targets.empty() ? m.predictor.cross_attention_projections() : config.lora_targets;
  m.predictor.apply_lora(targets, config.lora_rank, config.lora_scale, derive_seed(config.seed, 3));
  return m;
}

Checkpoint to_checkpoint(const Model& model) {
  Checkpoint ck;
  ck.metadata = model_config_to_json(model.config);
  ck.segments["cpe"] = select_prefix(model.cpe.params(), "cpe.");
  ck.segments["lora"] = select_prefix(model.predictor.params(), "lora.");
  ck.segments["predictor_base"] = select_prefix(model.predictor.params(), "unet.");
  const auto& a = model.schedule.alphas();
  ck.segments["schedule"]["alphas"] = Tensor({a.size()}, a);
  ck.segments["codec"]["factor"] = Tensor::scalar(static_cast<double>(model.codec->factor()));
  ck.segments["codec"]["kind"] = Tensor::scalar(static_cast<double>(model.codec->kind()));
  return ck;
}

Model from_checkpoint(const Checkpoint& ckpt, const ModelRegistry& registry) {
  for (const char* seg : {"cpe", "lora", "predictor_base", "schedule", "codec"}) {
    if (!ckpt.segments.count(seg)) throw IoError(std::string("checkpoint lacks segment '") + seg + "'");
  }
  Model m = build_model(model_config_from_json(ckpt.metadata), registry);
  m.cpe.params().load(ckpt.segments.at("cpe"));
  m.predictor.params().load(ckpt.segments.at("predictor_base"), false);
  m.predictor.params().load(ckpt.segments.at("lora"), false);
  const Tensor& alphas = ckpt.segments.at("schedule").at("alphas");
  m.schedule = NoiseSchedule(std::vector<double>(alphas.data().begin(), alphas.data().end()));
  const auto& codec = ckpt.segments.at("codec");
  if (static_cast<std::size_t>(codec.at("factor")[0]) != m.codec->factor()) {
    throw IoError("checkpoint codec factor disagrees with its metadata");
  }
  return m;
}

}  // namespace anomagic
