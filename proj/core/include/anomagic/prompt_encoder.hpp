// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "anomagic/autograd.hpp"
#include "anomagic/encoders.hpp"
#include "anomagic/image.hpp"
#include "anomagic/nn.hpp"

namespace anomagic {

/// Masked attention Softmax(Q K^T / sqrt(D) - (1 - M) C) V with the mask
/// applied per key. `key_mask` holds one 0/1 entry per key row.
ad::Var masked_attention(const ad::Var& q, const ad::Var& k, const ad::Var& v,
                         const std::vector<std::uint8_t>& key_mask, double penalty);

/// Softmax weights of the same masked logits, for leak measurements.
Tensor masked_attention_weights(const Tensor& q, const Tensor& k,
                                const std::vector<std::uint8_t>& key_mask, double penalty);

/// Splits text so every segment fits the encoder's token limit: sentence
/// boundaries first, then clause boundaries (comma/semicolon), then hard cuts.
std::vector<std::string> segment_caption(const std::string& text, const TextEncoder& encoder);

/// Mean of segment embeddings.
Tensor mean_pool(const std::vector<Tensor>& embeddings);

struct TextPrompt {
  Tensor vector;  // [D_text]
  std::size_t n_segments = 0;
};

TextPrompt encode_text_hierarchical(const std::string& text, const TextEncoder& encoder);

struct CpeConfig {
  std::size_t d_feat = 16;
  std::size_t d_attn = 16;
  std::size_t d_text = 16;
  std::size_t d_cond = 16;
  std::size_t heads = 1;
  double penalty = 1e4;
  /// Accept an all-background feature-grid mask (equivalent to no mask).
  bool allow_degenerate_mask = false;
  /// Keep only foreground query tokens in P_v.
  bool restrict_queries = false;
  /// Mean-pool P_v to a single token before fusion.
  bool pool_visual = false;
};

/// Prompt parts; at least one of (image and mask) or caption.
struct PromptInput {
  std::optional<Image> image;
  std::optional<Mask> mask;
  std::optional<std::string> caption;
};

/// Encoded prompt bundle. `p_c` carries the autograd graph back to the CPE
/// parameters when they require gradients.
struct CrossmodalCondition {
  ad::Var p_v;  // [N_v, D_attn]
  ad::Var p_t;  // [1, D_text]
  ad::Var p_c;  // [N_v + 1, D_cond]
  std::size_t n_segments = 0;
  bool visual_null = false;
  bool text_null = false;
};

/// Owns theta_CPE under the "cpe." prefix of its parameter store.
class CrossmodalPromptEncoder {
 public:
  CrossmodalPromptEncoder(CpeConfig config, std::uint64_t seed);

  const CpeConfig& config() const noexcept { return config_; }
  nn::ParameterStore& params() noexcept { return params_; }
  const nn::ParameterStore& params() const noexcept { return params_; }

  /// P_v from a feature map and a pixel mask (any-pooled to the grid).
  ad::Var region_focused_attention(const ImageFeatureMap& features, const Mask& pixel_mask) const;
  /// Same, with the mask already at grid resolution.
  ad::Var region_focused_attention_grid(const ImageFeatureMap& features, const Mask& grid_mask) const;

  ad::Var cross_fusion(const ad::Var& p_v, const ad::Var& p_t) const;

  CrossmodalCondition encode(const PromptInput& prompt, const ImageEncoder& image_encoder,
                             const TextEncoder& text_encoder) const;

 private:
  ad::Var cross_block(const std::string& prefix, const ad::Var& queries, const ad::Var& context) const;

  CpeConfig config_;
  nn::ParameterStore params_;
};

}  // namespace anomagic
