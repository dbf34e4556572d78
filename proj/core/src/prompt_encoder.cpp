// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#include "anomagic/prompt_encoder.hpp"

#include <cmath>
#include <sstream>

#include "anomagic/errors.hpp"
#include "anomagic/morphology.hpp"

namespace anomagic {

namespace {

Tensor key_bias(const std::vector<std::uint8_t>& key_mask, double penalty) {
  Tensor bias({1, key_mask.size()});
  for (std::size_t j = 0; j < key_mask.size(); ++j) bias[j] = key_mask[j] ? 0.0 : -penalty;
  return bias;
}

std::string join(const std::vector<std::string>& words, std::size_t begin, std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) out.push_back(' ');
    out += words[i];
  }
  return out;
}

bool ends_with_any(const std::string& w, std::string_view chars) {
  return !w.empty() && chars.find(w.back()) != std::string_view::npos;
}

// Splits [begin, end) into runs that end at words whose last character is in
// `chars` (the final run may end without one).
std::vector<std::pair<std::size_t, std::size_t>> runs(const std::vector<std::string>& words,
                                                      std::size_t begin, std::size_t end,
                                                      std::string_view chars) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t start = begin;
  for (std::size_t i = begin; i < end; ++i) {
    if (ends_with_any(words[i], chars)) {
      out.emplace_back(start, i + 1);
      start = i + 1;
    }
  }
  if (start < end) out.emplace_back(start, end);
  return out;
}

class Packer {
 public:
  Packer(const std::vector<std::string>& words, const TextEncoder& enc) : words_(words), enc_(enc) {}

  bool fits(std::size_t begin, std::size_t end) const {
    return enc_.tokenize(join(words_, begin, end)).size() <= enc_.token_limit();
  }

  // Greedily appends whole units [b, e) to the open segment.
  void pack(const std::vector<std::pair<std::size_t, std::size_t>>& units, int level) {
    for (auto [b, e] : units) {
      if (open_ && fits(open_begin_, e)) {
        open_end_ = e;
        continue;
      }
      if (fits(b, e)) {
        flush();
        open_ = true;
        open_begin_ = b;
        open_end_ = e;
        continue;
      }
      flush();
      if (level == 0) {
        pack(runs(words_, b, e, ",;"), 1);
        flush();
      } else {
        hard_split(b, e);
      }
    }
  }

  void hard_split(std::size_t b, std::size_t e) {
    std::size_t start = b;
    while (start < e) {
      std::size_t stop = start + 1;
      if (!fits(start, stop)) {
        throw RangeError("word '" + words_[start] + "' alone exceeds the token limit");
      }
      while (stop < e && fits(start, stop + 1)) ++stop;
      if (stop < e) {
        segments_.push_back(join(words_, start, stop));
      } else {
        open_ = true;
        open_begin_ = start;
        open_end_ = stop;
      }
      start = stop;
    }
  }

  void flush() {
    if (open_) segments_.push_back(join(words_, open_begin_, open_end_));
    open_ = false;
  }

  std::vector<std::string> take() {
    flush();
    return std::move(segments_);
  }

 private:
  const std::vector<std::string>& words_;
  const TextEncoder& enc_;
  std::vector<std::string> segments_;
  bool open_ = false;
  std::size_t open_begin_ = 0, open_end_ = 0;
};

}  // namespace

ad::Var masked_attention(const ad::Var& q, const ad::Var& k, const ad::Var& v,
                         const std::vector<std::uint8_t>& key_mask, double penalty) {
  if (key_mask.size() != k.shape().at(0)) throw ShapeError("masked_attention: key mask length");
  if (!(penalty > 0.0)) throw DomainError("masked_attention: penalty must be positive");
  const Tensor bias = key_bias(key_mask, penalty);
  return nn::attention(q, k, v, 1, &bias);
}

Tensor masked_attention_weights(const Tensor& q, const Tensor& k,
                                const std::vector<std::uint8_t>& key_mask, double penalty) {
  const std::size_t nq = q.dim(0), nk = k.dim(0), d = q.dim(1);
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor w({nq, nk});
  for (std::size_t i = 0; i < nq; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < nk; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += q.at(i, c) * k.at(j, c);
      w.at(i, j) = s * inv - (key_mask[j] ? 0.0 : penalty);
      mx = std::max(mx, w.at(i, j));
    }
    double z = 0.0;
    for (std::size_t j = 0; j < nk; ++j) z += (w.at(i, j) = std::exp(w.at(i, j) - mx));
    for (std::size_t j = 0; j < nk; ++j) w.at(i, j) /= z;
  }
  return w;
}

std::vector<std::string> segment_caption(const std::string& text, const TextEncoder& encoder) {
  if (encoder.tokenize(text).size() <= encoder.token_limit()) return {text};
  std::vector<std::string> words;
  std::istringstream in(text);
  for (std::string w; in >> w;) words.push_back(w);
  Packer packer(words, encoder);
  packer.pack(runs(words, 0, words.size(), ".!?"), 0);
  return packer.take();
}

Tensor mean_pool(const std::vector<Tensor>& embeddings) {
  if (embeddings.empty()) throw DomainError("mean_pool of no embeddings");
  Tensor out = embeddings.front();
  for (std::size_t i = 1; i < embeddings.size(); ++i) {
    if (embeddings[i].shape() != out.shape()) throw ShapeError("mean_pool: embedding shapes differ");
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += embeddings[i][d];
  }
  if (embeddings.size() > 1) {
    const double n = static_cast<double>(embeddings.size());
    for (auto& x : out.data()) x /= n;
  }
  return out;
}

TextPrompt encode_text_hierarchical(const std::string& text, const TextEncoder& encoder) {
  const auto segments = segment_caption(text, encoder);
  std::vector<Tensor> emb;
  emb.reserve(segments.size());
  for (const auto& s : segments) emb.push_back(encoder.encode_segment(s));
  return {mean_pool(emb), segments.size()};
}

CrossmodalPromptEncoder::CrossmodalPromptEncoder(CpeConfig config, std::uint64_t seed)
    : config_(config) {
  if (!(config_.penalty > 0.0)) throw ConfigError("CPE penalty C must be positive");
  if (config_.heads == 0 || config_.d_attn % config_.heads || config_.d_cond % config_.heads) {
    throw ConfigError("CPE widths must be divisible by the head count");
  }
  Rng rng(seed);
  const auto& c = config_;
  nn::add_linear(params_, "cpe.q", c.d_feat, c.d_attn, true, true, rng);
  nn::add_linear(params_, "cpe.k", c.d_feat, c.d_attn, true, true, rng);
  nn::add_linear(params_, "cpe.v", c.d_feat, c.d_attn, true, true, rng);
  nn::add_linear(params_, "cpe.vis_proj", c.d_attn, c.d_cond, true, true, rng);
  nn::add_linear(params_, "cpe.txt_proj", c.d_text, c.d_cond, true, true, rng);
  for (const std::string blk : {"cpe.t2v", "cpe.v2t"}) {
    nn::add_layer_norm(params_, blk + ".ln_q", c.d_cond, true);
    nn::add_layer_norm(params_, blk + ".ln_kv", c.d_cond, true);
    for (const char* p : {".q", ".k", ".v", ".o"}) {
      nn::add_linear(params_, blk + p, c.d_cond, c.d_cond, true, true, rng);
    }
  }
  nn::add_linear(params_, "cpe.fuse", c.d_cond, c.d_cond, true, true, rng);
  params_.add("cpe.null_text", randn({1, c.d_text}, rng, 0.02), true);
  params_.add("cpe.null_visual", randn({1, c.d_attn}, rng, 0.02), true);
}

ad::Var CrossmodalPromptEncoder::region_focused_attention(const ImageFeatureMap& features,
                                                          const Mask& pixel_mask) const {
  if (pixel_mask.height() != features.source_height || pixel_mask.width() != features.source_width) {
    throw ShapeError("mask size differs from the encoded image size");
  }
  return region_focused_attention_grid(features, any_pool(pixel_mask, features.rows, features.cols));
}

ad::Var CrossmodalPromptEncoder::region_focused_attention_grid(const ImageFeatureMap& features,
                                                               const Mask& grid_mask) const {
  if (grid_mask.height() != features.rows || grid_mask.width() != features.cols) {
    throw ShapeError("grid mask does not match the feature grid");
  }
  if (features.dim() != config_.d_feat) {
    throw ShapeError("feature width " + std::to_string(features.dim()) + " != D_feat " +
                     std::to_string(config_.d_feat));
  }
  if (!grid_mask.any() && !config_.allow_degenerate_mask) {
    throw DegenerateMaskError(
        "mask has no foreground cell on the feature grid; masked attention would equal "
        "unmasked attention");
  }
  const ad::Var f = ad::Var::constant(features.tokens);
  ad::Var q = nn::linear(params_, "cpe.q", f);
  const ad::Var k = nn::linear(params_, "cpe.k", f);
  const ad::Var v = nn::linear(params_, "cpe.v", f);
  const auto& m = grid_mask.data();
  if (config_.restrict_queries && grid_mask.any()) {
    std::vector<ad::Var> rows;
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (!m[i]) continue;
      Tensor sel({1, m.size()});
      sel[i] = 1.0;
      rows.push_back(ad::matmul(ad::Var::constant(std::move(sel)), q));
    }
    q = ad::concat0(rows);
  }
  const Tensor bias = key_bias(m, config_.penalty);
  ad::Var pv = nn::attention(q, k, v, config_.heads, &bias);
  if (config_.pool_visual) pv = ad::mean_rows(pv);
  return pv;
}

ad::Var CrossmodalPromptEncoder::cross_block(const std::string& prefix, const ad::Var& queries,
                                             const ad::Var& context) const {
  const ad::Var qn = nn::layer_norm(params_, prefix + ".ln_q", queries);
  const ad::Var cn = nn::layer_norm(params_, prefix + ".ln_kv", context);
  const ad::Var att = nn::attention(nn::linear(params_, prefix + ".q", qn),
                                    nn::linear(params_, prefix + ".k", cn),
                                    nn::linear(params_, prefix + ".v", cn), config_.heads);
  return ad::add(queries, nn::linear(params_, prefix + ".o", att));
}

ad::Var CrossmodalPromptEncoder::cross_fusion(const ad::Var& p_v, const ad::Var& p_t) const {
  if (p_v.shape().size() != 2 || p_v.shape()[1] != config_.d_attn) {
    throw ShapeError("P_v must be [N, D_attn], got " + shape_str(p_v.shape()));
  }
  if (p_t.shape() != Shape{1, config_.d_text}) {
    throw ShapeError("P_t must be [1, D_text], got " + shape_str(p_t.shape()));
  }
  const ad::Var vis = nn::linear(params_, "cpe.vis_proj", p_v);
  const ad::Var txt = nn::linear(params_, "cpe.txt_proj", p_t);
  const ad::Var txt_att = cross_block("cpe.t2v", txt, vis);
  const ad::Var vis_att = cross_block("cpe.v2t", vis, txt);
  const ad::Var parts[] = {vis_att, txt_att};
  return nn::linear(params_, "cpe.fuse", ad::concat0(parts));
}

CrossmodalCondition CrossmodalPromptEncoder::encode(const PromptInput& prompt,
                                                    const ImageEncoder& image_encoder,
                                                    const TextEncoder& text_encoder) const {
  const bool has_visual = prompt.image.has_value() && prompt.mask.has_value();
  const bool has_text = prompt.caption.has_value();
  if (prompt.image.has_value() != prompt.mask.has_value()) {
    throw ValidationError("a visual prompt needs both an image and a mask");
  }
  if (!has_visual && !has_text) throw ValidationError("prompt has neither image+mask nor caption");
  CrossmodalCondition out;
  if (has_visual) {
    out.p_v = region_focused_attention(image_encoder.encode(*prompt.image), *prompt.mask);
  } else {
    out.p_v = params_.get("cpe.null_visual");
    out.visual_null = true;
  }
  if (has_text) {
    if (text_encoder.embedding_dim() != config_.d_text) {
      throw ShapeError("text encoder width differs from D_text");
    }
    TextPrompt tp = encode_text_hierarchical(*prompt.caption, text_encoder);
    out.n_segments = tp.n_segments;
    out.p_t = ad::Var::constant(tp.vector.reshaped({1, config_.d_text}));
  } else {
    out.p_t = params_.get("cpe.null_text");
    out.text_null = true;
  }
  out.p_c = cross_fusion(out.p_v, out.p_t);
  return out;
}

}  // namespace anomagic
