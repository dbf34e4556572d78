// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "anomagic/autograd.hpp"
#include "anomagic/rng.hpp"

namespace anomagic::nn {

/// Named parameter tensors with a per-parameter trainable flag.
///
/// Handles returned by get() share storage with the store, so in-place
/// optimizer updates are visible to every holder. Copying a store deep-copies
/// the tensors.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore& other);
  ParameterStore& operator=(const ParameterStore& other);
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  ad::Var add(const std::string& name, Tensor init, bool trainable);
  const ad::Var& get(std::string_view name) const;
  bool contains(std::string_view name) const;
  void erase(std::string_view name);

  void set_trainable(std::string_view name, bool trainable);
  void set_all_trainable(bool trainable);
  bool is_trainable(std::string_view name) const;

  std::vector<std::string> names() const;
  std::vector<std::string> trainable_names() const;
  std::size_t count(bool trainable_only = false) const;

  /// Checksum over every parameter whose name passes the filter (all if none).
  std::uint64_t checksum(const std::function<bool(const std::string&)>& filter = {}) const;

  std::map<std::string, Tensor> snapshot() const;
  /// Overwrites values of existing parameters in place; shapes must match.
  void load(const std::map<std::string, Tensor>& values, bool require_all = true);

  void zero_grad();

 private:
  struct Entry {
    ad::Var var;
    bool trainable = false;
  };
  std::map<std::string, Entry, std::less<>> params_;
};

/// Low-rank additive update W + scale * B * A attached to one projection.
/// A is (rank x d_in), B is (d_out x rank); both live in the owning store
/// under "lora.<target>.A" / "lora.<target>.B".
struct LoraAdapter {
  std::string target;
  std::size_t rank = 4;
  double scale = 1.0;

  std::string a_name() const { return "lora." + target + ".A"; }
  std::string b_name() const { return "lora." + target + ".B"; }
};

/// y = x W^T + b (+ scale * (x A^T) B^T when an adapter is attached).
/// `prefix.weight` is [d_out, d_in]; `prefix.bias` is optional.
ad::Var linear(const ParameterStore& ps, std::string_view prefix, const ad::Var& x,
               const LoraAdapter* adapter = nullptr);

/// W + scale * B * A for an attached adapter.
Tensor merged_weight(const ParameterStore& ps, const LoraAdapter& adapter);

// Initializers (uniform in +-1/sqrt(fan_in), matching common framework defaults).
Tensor init_linear_weight(std::size_t d_out, std::size_t d_in, Rng& rng);
Tensor init_conv_weight(std::size_t out_ch, std::size_t in_ch, std::size_t k, Rng& rng);
Tensor init_bias(std::size_t n, std::size_t fan_in, Rng& rng);

void add_linear(ParameterStore& ps, const std::string& prefix, std::size_t d_in,
                std::size_t d_out, bool bias, bool trainable, Rng& rng);
void add_conv(ParameterStore& ps, const std::string& prefix, std::size_t in_ch,
              std::size_t out_ch, std::size_t k, bool trainable, Rng& rng);
void add_layer_norm(ParameterStore& ps, const std::string& prefix, std::size_t n, bool trainable);

ad::Var conv(const ParameterStore& ps, std::string_view prefix, const ad::Var& x,
             std::size_t padding);
ad::Var layer_norm(const ParameterStore& ps, std::string_view prefix, const ad::Var& x);

/// Scaled dot-product attention, optionally multi-head over column blocks.
/// q, k: [Nq, D], [Nk, D]; v: [Nk, Dv]; `logit_bias` (if given) is [Nq, Nk] or [1, Nk]
/// and is added to every head's logits before the softmax.
ad::Var attention(const ad::Var& q, const ad::Var& k, const ad::Var& v, std::size_t heads,
                  const Tensor* logit_bias = nullptr);

}  // namespace anomagic::nn
