// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#include "anomagic/nn.hpp"

#include <cmath>

#include "anomagic/errors.hpp"

namespace anomagic::nn {

ParameterStore::ParameterStore(const ParameterStore& other) { *this = other; }

ParameterStore& ParameterStore::operator=(const ParameterStore& other) {
  if (this == &other) return *this;
  params_.clear();
  for (const auto& [name, e] : other.params_) {
    params_.emplace(name, Entry{ad::Var::leaf(e.var.value(), e.trainable), e.trainable});
  }
  return *this;
}

ad::Var ParameterStore::add(const std::string& name, Tensor init, bool trainable) {
  if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  auto var = ad::Var::leaf(std::move(init), trainable);
  params_.emplace(name, Entry{var, trainable});
  return var;
}

const ad::Var& ParameterStore::get(std::string_view name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return it->second.var;
}

bool ParameterStore::contains(std::string_view name) const { return params_.find(name) != params_.end(); }

void ParameterStore::erase(std::string_view name) {
  auto it = params_.find(name);
  if (it != params_.end()) params_.erase(it);
}

void ParameterStore::set_trainable(std::string_view name, bool trainable) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  it->second.trainable = trainable;
  it->second.var.set_requires_grad(trainable);
}

void ParameterStore::set_all_trainable(bool trainable) {
  for (auto& [_, e] : params_) {
    e.trainable = trainable;
    e.var.set_requires_grad(trainable);
  }
}

bool ParameterStore::is_trainable(std::string_view name) const {
  auto it = params_.find(name);
  return it != params_.end() && it->second.trainable;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  for (const auto& [n, _] : params_) out.push_back(n);
  return out;
}

std::vector<std::string> ParameterStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [n, e] : params_)
    if (e.trainable) out.push_back(n);
  return out;
}

std::size_t ParameterStore::count(bool trainable_only) const {
  std::size_t n = 0;
  for (const auto& [_, e] : params_)
    if (!trainable_only || e.trainable) n += e.var.value().size();
  return n;
}

std::uint64_t ParameterStore::checksum(const std::function<bool(const std::string&)>& filter) const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [n, e] : params_) {
    if (filter && !filter(n)) continue;
    h = tensor_checksum(e.var.value(), h ^ fnv1a64(n));
  }
  return h;
}

std::map<std::string, Tensor> ParameterStore::snapshot() const {
  std::map<std::string, Tensor> out;
  for (const auto& [n, e] : params_) out.emplace(n, e.var.value());
  return out;
}

void ParameterStore::load(const std::map<std::string, Tensor>& values, bool require_all) {
  for (auto& [n, e] : params_) {
    auto it = values.find(n);
    if (it == values.end()) {
      if (require_all) throw IntegrityError("checkpoint lacks parameter '" + n + "'");
      continue;
    }
    if (it->second.shape() != e.var.value().shape()) {
      throw ShapeError("parameter '" + n + "' has shape " + shape_str(e.var.value().shape()) +
                       " but checkpoint holds " + shape_str(it->second.shape()));
    }
    e.var.mutable_value() = it->second;
  }
}

void ParameterStore::zero_grad() {
  for (auto& [_, e] : params_) e.var.zero_grad();
}

ad::Var linear(const ParameterStore& ps, std::string_view prefix, const ad::Var& x,
               const LoraAdapter* adapter) {
  const std::string p(prefix);
  ad::Var y = ad::matmul(x, ps.get(p + ".weight"), /*transpose_b=*/true);
  if (ps.contains(p + ".bias")) y = ad::add_row_bias(y, ps.get(p + ".bias"));
  if (adapter != nullptr) {
    ad::Var down = ad::matmul(x, ps.get(adapter->a_name()), true);
    ad::Var up = ad::matmul(down, ps.get(adapter->b_name()), true);
    y = ad::add(y, ad::scale(up, adapter->scale));
  }
  return y;
}

Tensor merged_weight(const ParameterStore& ps, const LoraAdapter& adapter) {
  const Tensor& W = ps.get(adapter.target + ".weight").value();
  const Tensor& A = ps.get(adapter.a_name()).value();
  const Tensor& B = ps.get(adapter.b_name()).value();
  const std::size_t d_out = W.dim(0), d_in = W.dim(1), r = A.dim(0);
  Tensor out = W;
  for (std::size_t i = 0; i < d_out; ++i)
    for (std::size_t j = 0; j < d_in; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < r; ++k) acc += B.at(i, k) * A.at(k, j);
      out.at(i, j) += adapter.scale * acc;
    }
  return out;
}

Tensor init_linear_weight(std::size_t d_out, std::size_t d_in, Rng& rng) {
  const double b = 1.0 / std::sqrt(static_cast<double>(d_in));
  return rand_uniform({d_out, d_in}, rng, -b, b);
}

Tensor init_conv_weight(std::size_t out_ch, std::size_t in_ch, std::size_t k, Rng& rng) {
  const double b = 1.0 / std::sqrt(static_cast<double>(in_ch * k * k));
  return rand_uniform({out_ch, in_ch, k, k}, rng, -b, b);
}

Tensor init_bias(std::size_t n, std::size_t fan_in, Rng& rng) {
  const double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return rand_uniform({n}, rng, -b, b);
}

void add_linear(ParameterStore& ps, const std::string& prefix, std::size_t d_in,
                std::size_t d_out, bool bias, bool trainable, Rng& rng) {
  ps.add(prefix + ".weight", init_linear_weight(d_out, d_in, rng), trainable);
  if (bias) ps.add(prefix + ".bias", init_bias(d_out, d_in, rng), trainable);
}

void add_conv(ParameterStore& ps, const std::string& prefix, std::size_t in_ch,
              std::size_t out_ch, std::size_t k, bool trainable, Rng& rng) {
  ps.add(prefix + ".weight", init_conv_weight(out_ch, in_ch, k, rng), trainable);
  ps.add(prefix + ".bias", init_bias(out_ch, in_ch * k * k, rng), trainable);
}

void add_layer_norm(ParameterStore& ps, const std::string& prefix, std::size_t n, bool trainable) {
  ps.add(prefix + ".gamma", Tensor::ones({n}), trainable);
  ps.add(prefix + ".beta", Tensor::zeros({n}), trainable);
}

ad::Var conv(const ParameterStore& ps, std::string_view prefix, const ad::Var& x,
             std::size_t padding) {
  const std::string p(prefix);
  return ad::conv2d(x, ps.get(p + ".weight"), ps.get(p + ".bias"), padding);
}

ad::Var layer_norm(const ParameterStore& ps, std::string_view prefix, const ad::Var& x) {
  const std::string p(prefix);
  return ad::layer_norm_rows(x, ps.get(p + ".gamma"), ps.get(p + ".beta"));
}

ad::Var attention(const ad::Var& q, const ad::Var& k, const ad::Var& v, std::size_t heads,
                  const Tensor* logit_bias) {
  const std::size_t d = q.shape().at(1);
  if (heads == 0 || d % heads != 0) throw ConfigError("attention: width not divisible by heads");
  const std::size_t dv = v.shape().at(1);
  if (k.shape().at(1) != d || dv % heads != 0 || k.shape()[0] != v.shape()[0]) {
    throw ShapeError("attention: q/k/v widths or key counts disagree");
  }
  const std::size_t nq = q.shape()[0], nk = k.shape()[0];
  std::optional<ad::Var> bias;
  if (logit_bias != nullptr) {
    Tensor full({nq, nk});
    if (logit_bias->shape() == Shape{nq, nk}) {
      full = *logit_bias;
    } else if (logit_bias->shape() == Shape{1, nk}) {
      for (std::size_t i = 0; i < nq; ++i)
        for (std::size_t j = 0; j < nk; ++j) full.at(i, j) = (*logit_bias)[j];
    } else {
      throw ShapeError("attention: logit bias shape " + shape_str(logit_bias->shape()));
    }
    bias = ad::Var::constant(std::move(full));
  }
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<ad::Var> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    ad::Var qh = heads == 1 ? q : ad::slice_cols(q, h * dh, (h + 1) * dh);
    ad::Var kh = heads == 1 ? k : ad::slice_cols(k, h * dh, (h + 1) * dh);
    ad::Var vh = heads == 1 ? v : ad::slice_cols(v, h * dv / heads, (h + 1) * dv / heads);
    ad::Var logits = ad::scale(ad::matmul(qh, kh, true), inv_sqrt);
    if (bias) logits = ad::add(logits, *bias);
    outs.push_back(ad::matmul(ad::softmax_rows(logits), vh));
  }
  return heads == 1 ? outs[0] : ad::concat_cols(outs);
}

}  // namespace anomagic::nn
