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

#include "anomagic/image.hpp"
#include "anomagic/tensor.hpp"

namespace anomagic {

/// Spatial tokens of an image, row-major over the patch grid.
struct ImageFeatureMap {
  Tensor tokens;  // [rows*cols, D_feat]
  std::size_t rows = 0, cols = 0;
  std::size_t source_height = 0, source_width = 0;

  std::size_t n_patches() const noexcept { return rows * cols; }
  std::size_t dim() const { return tokens.dim(1); }
};

/// Frozen image encoder contract.
class ImageEncoder {
 public:
  virtual ~ImageEncoder() = default;
  virtual ImageFeatureMap encode(const Image& image) const = 0;
  virtual std::size_t patch_size() const = 0;
  virtual std::size_t feature_dim() const = 0;
  /// Checksum of every weight; frozen encoders never change it.
  virtual std::uint64_t checksum() const = 0;
};

/// Frozen text encoder contract with a hard token limit (markers included).
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::vector<std::string> tokenize(const std::string& text) const = 0;
  /// Throws RangeError when the segment exceeds the token limit.
  virtual Tensor encode_segment(const std::string& text) const = 0;  // [D_text]
  virtual std::size_t token_limit() const = 0;
  virtual std::size_t embedding_dim() const = 0;
  virtual std::uint64_t checksum() const = 0;
};

/// Which toy-encoder layer supplies the spatial tokens.
enum class FeatureLayer { kFinal, kPenultimate };

/// Non-overlapping patch embedding followed by a per-token tanh MLP layer.
/// Both layers act on one patch at a time, so tokens are strictly local.
class ToyImageEncoder final : public ImageEncoder {
 public:
  ToyImageEncoder(std::size_t patch_size, std::size_t feature_dim, std::uint64_t seed,
                  FeatureLayer layer = FeatureLayer::kFinal);

  ImageFeatureMap encode(const Image& image) const override;
  std::size_t patch_size() const override { return patch_; }
  std::size_t feature_dim() const override { return dim_; }
  std::uint64_t checksum() const override;

 private:
  std::size_t patch_, dim_;
  FeatureLayer layer_;
  Tensor w1_, b1_, w2_, b2_;  // w1 [D, 3*p*p], w2 [D, D]
};

/// Whitespace tokenizer with begin/end markers; each token id is the 64-bit
/// hash of its text and seeds that token's Gaussian embedding row. The
/// segment embedding is the mean over token embeddings.
class ToyTextEncoder final : public TextEncoder {
 public:
  ToyTextEncoder(std::size_t token_limit, std::size_t embedding_dim, std::uint64_t seed);

  std::vector<std::string> tokenize(const std::string& text) const override;
  Tensor encode_segment(const std::string& text) const override;
  std::size_t token_limit() const override { return limit_; }
  std::size_t embedding_dim() const override { return dim_; }
  std::uint64_t checksum() const override;

  static constexpr const char* kBegin = "<|startoftext|>";
  static constexpr const char* kEnd = "<|endoftext|>";

 private:
  Tensor token_embedding(const std::string& token) const;
  std::size_t limit_, dim_;
  std::uint64_t seed_;
};

/// Registry entry: name -> {kind: toy|external, patch_size, D_feat, token_limit, ...}.
struct EncoderSpec {
  std::string name;
  std::string kind = "toy";
  std::size_t patch_size = 8;
  std::size_t feature_dim = 16;
  std::size_t token_limit = 77;
  std::size_t text_dim = 16;
  std::uint64_t seed = 7;
  FeatureLayer layer = FeatureLayer::kFinal;
  std::filesystem::path weight_path;
};

struct EncoderPair {
  std::shared_ptr<const ImageEncoder> image;
  std::shared_ptr<const TextEncoder> text;
};

class ModelRegistry {
 public:
  using ExternalFactory = std::function<EncoderPair(const EncoderSpec&)>;

  /// Contains the built-in "toy" entry.
  ModelRegistry();
  /// JSON object of name -> spec fields.
  static ModelRegistry from_file(const std::filesystem::path& path);

  void add(EncoderSpec spec);
  const EncoderSpec& spec(const std::string& name) const;
  bool contains(const std::string& name) const { return specs_.count(name) > 0; }

  /// Adapters for real models register here under the entry's name.
  static void register_external(const std::string& name, ExternalFactory factory);

  EncoderPair create(const std::string& name) const;

 private:
  std::map<std::string, EncoderSpec> specs_;
};

}  // namespace anomagic
