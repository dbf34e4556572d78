// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#include "anomagic/encoders.hpp"

#include <cmath>
#include <fstream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <sstream>

#include "anomagic/errors.hpp"
#include "anomagic/rng.hpp"

namespace anomagic {

namespace {

std::map<std::string, ModelRegistry::ExternalFactory>& external_factories() {
  static std::map<std::string, ModelRegistry::ExternalFactory> f;
  return f;
}

std::mutex& factory_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

ToyImageEncoder::ToyImageEncoder(std::size_t patch_size, std::size_t feature_dim,
                                 std::uint64_t seed, FeatureLayer layer)
    : patch_(patch_size), dim_(feature_dim), layer_(layer) {
  if (patch_ == 0 || dim_ == 0) throw ConfigError("toy image encoder needs patch_size, D_feat > 0");
  Rng rng(seed);
  const std::size_t fan_in = 3 * patch_ * patch_;
  w1_ = randn({dim_, fan_in}, rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  b1_ = randn({dim_}, rng, 0.1);
  w2_ = randn({dim_, dim_}, rng, 1.0 / std::sqrt(static_cast<double>(dim_)));
  b2_ = randn({dim_}, rng, 0.1);
}

ImageFeatureMap ToyImageEncoder::encode(const Image& image) const {
  const std::size_t H = image.height(), W = image.width();
  if (H == 0 || W == 0 || H % patch_ != 0 || W % patch_ != 0) {
    throw ShapeError("image " + std::to_string(H) + "x" + std::to_string(W) +
                     " not divisible by patch size " + std::to_string(patch_));
  }
  ImageFeatureMap f;
  f.rows = H / patch_;
  f.cols = W / patch_;
  f.source_height = H;
  f.source_width = W;
  f.tokens = Tensor({f.n_patches(), dim_});
  std::vector<double> patch(3 * patch_ * patch_);
  std::vector<double> hidden(dim_);
  for (std::size_t r = 0; r < f.rows; ++r)
    for (std::size_t c = 0; c < f.cols; ++c) {
      std::size_t k = 0;
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t y = 0; y < patch_; ++y)
          for (std::size_t x = 0; x < patch_; ++x)
            patch[k++] = image.at(ch, r * patch_ + y, c * patch_ + x);
      for (std::size_t d = 0; d < dim_; ++d) {
        double acc = b1_[d];
        for (std::size_t i = 0; i < patch.size(); ++i) acc += w1_.at(d, i) * patch[i];
        hidden[d] = acc;
      }
      const std::size_t row = r * f.cols + c;
      if (layer_ == FeatureLayer::kPenultimate) {
        for (std::size_t d = 0; d < dim_; ++d) f.tokens.at(row, d) = hidden[d];
        continue;
      }
      for (std::size_t d = 0; d < dim_; ++d) {
        double acc = b2_[d];
        for (std::size_t i = 0; i < dim_; ++i) acc += w2_.at(d, i) * std::tanh(hidden[i]);
        f.tokens.at(row, d) = acc;
      }
    }
  return f;
}

std::uint64_t ToyImageEncoder::checksum() const {
  std::uint64_t h = tensor_checksum(w1_);
  h = tensor_checksum(b1_, h);
  h = tensor_checksum(w2_, h);
  return tensor_checksum(b2_, h);
}

ToyTextEncoder::ToyTextEncoder(std::size_t token_limit, std::size_t embedding_dim, std::uint64_t seed)
    : limit_(token_limit), dim_(embedding_dim), seed_(seed) {
  if (limit_ < 2) throw ConfigError("token_limit must be >= 2 (begin/end markers)");
  if (dim_ == 0) throw ConfigError("text embedding_dim must be > 0");
}

std::vector<std::string> ToyTextEncoder::tokenize(const std::string& text) const {
  std::vector<std::string> tokens{kBegin};
  std::istringstream in(text);
  for (std::string w; in >> w;) tokens.push_back(w);
  tokens.emplace_back(kEnd);
  return tokens;
}

Tensor ToyTextEncoder::token_embedding(const std::string& token) const {
  Rng rng(derive_seed(seed_, fnv1a64(token)));
  return randn({dim_}, rng);
}

Tensor ToyTextEncoder::encode_segment(const std::string& text) const {
  const auto tokens = tokenize(text);
  if (tokens.size() > limit_) {
    throw RangeError("segment has " + std::to_string(tokens.size()) + " tokens, limit is " +
                     std::to_string(limit_));
  }
  Tensor out({dim_});
  for (const auto& t : tokens) {
    const Tensor e = token_embedding(t);
    for (std::size_t d = 0; d < dim_; ++d) out[d] += e[d];
  }
  for (std::size_t d = 0; d < dim_; ++d) out[d] /= static_cast<double>(tokens.size());
  return out;
}

std::uint64_t ToyTextEncoder::checksum() const {
  // Weights are a pure function of (seed, dim); hash the markers' rows too so
  // a changed generator shows up.
  std::uint64_t h = tensor_checksum(token_embedding(kBegin), seed_);
  return tensor_checksum(token_embedding(kEnd), h ^ dim_);
}

ModelRegistry::ModelRegistry() {
  EncoderSpec toy;
  toy.name = "toy";
  add(toy);
}

ModelRegistry ModelRegistry::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model registry '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("model registry: ") + e.what(), 0);
  }
  if (!j.is_object()) throw ConfigError("model registry must map names to specs");
  ModelRegistry reg;
  for (const auto& [name, v] : j.items()) {
    EncoderSpec s;
    s.name = name;
    s.kind = v.value("kind", s.kind);
    if (s.kind != "toy" && s.kind != "external") {
      throw ConfigError("model '" + name + "': kind must be toy or external");
    }
    s.patch_size = v.value("patch_size", s.patch_size);
    s.feature_dim = v.value("D_feat", s.feature_dim);
    s.token_limit = v.value("token_limit", s.token_limit);
    s.text_dim = v.value("D_text", s.text_dim);
    s.seed = v.value("seed", s.seed);
    const std::string layer = v.value("layer", std::string("final"));
    if (layer == "final") {
      s.layer = FeatureLayer::kFinal;
    } else if (layer == "penultimate") {
      s.layer = FeatureLayer::kPenultimate;
    } else {
      throw ConfigError("model '" + name + "': layer must be final or penultimate");
    }
    if (v.contains("weight_path")) {
      s.weight_path = v["weight_path"].get<std::string>();
      if (s.weight_path.is_relative()) s.weight_path = path.parent_path() / s.weight_path;
    }
    reg.add(std::move(s));
  }
  return reg;
}

void ModelRegistry::add(EncoderSpec spec) { specs_[spec.name] = std::move(spec); }

const EncoderSpec& ModelRegistry::spec(const std::string& name) const {
  auto it = specs_.find(name);
  if (it == specs_.end()) throw ConfigError("unknown encoder '" + name + "'");
  return it->second;
}

void ModelRegistry::register_external(const std::string& name, ExternalFactory factory) {
  std::lock_guard lock(factory_mutex());
  external_factories()[name] = std::move(factory);
}

EncoderPair ModelRegistry::create(const std::string& name) const {
  const EncoderSpec& s = spec(name);
  if (s.kind == "toy") {
    return {std::make_shared<ToyImageEncoder>(s.patch_size, s.feature_dim, s.seed, s.layer),
            std::make_shared<ToyTextEncoder>(s.token_limit, s.text_dim, derive_seed(s.seed, 1))};
  }
  std::lock_guard lock(factory_mutex());
  auto it = external_factories().find(name);
  if (it == external_factories().end()) {
    throw ConfigError("external encoder '" + name + "' has no registered adapter");
  }
  return it->second(s);
}

}  // namespace anomagic
