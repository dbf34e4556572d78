// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#include "anomagic/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "anomagic/errors.hpp"
#include "anomagic/morphology.hpp"

namespace anomagic {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long out = 0;
  try {
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty() || v[0] == '-') {
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != v.size() || v.empty()) throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  return out;
}

struct Sample {
  const Triplet* triplet;
  const Image* image;
  const Mask* mask;
};

class DataCache {
 public:
  explicit DataCache(const DatasetManifest& manifest) : manifest_(manifest) {}
  Sample get(const Triplet* t) {
    auto it = cache_.find(t->id);
    if (it == cache_.end()) {
      it = cache_.emplace(t->id, std::make_pair(manifest_.load_image(*t), manifest_.load_mask(*t))).first;
    }
    return {t, &it->second.first, &it->second.second};
  }

 private:
  const DatasetManifest& manifest_;
  std::map<std::string, std::pair<Image, Mask>> cache_;
};

ad::Var sample_loss(const Sample& s, const Model& model, const TrainConfig& config, Rng& rng,
                    std::size_t step, const TrainHooks& hooks) {
  PromptInput prompt;
  prompt.image = *s.image;
  prompt.mask = *s.mask;
  if (!s.triplet->caption.empty()) prompt.caption = s.triplet->caption;
  const CrossmodalCondition cond = model.cpe.encode(prompt, *model.encoders.image, *model.encoders.text);

  const Mask m_inp = dilate_mask(*s.mask, config.dilation_radius);
  const Image input = masked_input(*s.image, m_inp, config.mask_fill, &rng);
  const Tensor z0 = model.codec->encode(config.noise_target == NoiseTarget::kInput ? input : *s.image);
  std::uniform_int_distribution<std::size_t> pick_t(1, model.schedule.T());
  const std::size_t t = pick_t(rng);
  const Tensor eps = randn(z0.shape(), rng);
  const Tensor z_t = forward_noise(z0, t, eps, model.schedule);
  if (hooks.on_sample) hooks.on_sample({step, s.triplet->id, m_inp, input, z0, eps, z_t, t});

  std::vector<ad::Var> parts{ad::Var::constant(z_t)};
  if (model.config.predictor.extra_channels > 0) {
    parts.push_back(ad::Var::constant(model.codec->cell_mask(m_inp)));
  }
  const ad::Var eps_hat = model.predictor.forward(ad::concat0(parts), t, cond.p_c);
  return masked_loss(eps, eps_hat, model.codec->latent_mask(m_inp), config.loss_normalization);
}

std::vector<std::pair<std::string, ad::Var>> trainable(const nn::ParameterStore& ps) {
  std::vector<std::pair<std::string, ad::Var>> out;
  for (const auto& n : ps.trainable_names()) out.emplace_back(n, ps.get(n));
  return out;
}

void dump_diagnostics(const std::filesystem::path& dir, std::size_t step,
                      const std::vector<std::string>& ids, const std::vector<double>& losses) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "diagnostics.json");
  out << nlohmann::json{{"step", step}, {"triplets", ids}, {"sample_losses", losses}}.dump(2) << '\n';
}

}  // namespace

std::size_t default_dilation_radius(std::size_t image_size) {
  return static_cast<std::size_t>(std::lround(8.0 * static_cast<double>(image_size) / 512.0));
}

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno);
    const std::string k = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
    if (k == "dilation_radius") {
      c.dilation_radius = parse_uint(k, v);
    } else if (k == "mask_fill") {
      if (v == "zeros") c.mask_fill = MaskFill::kZeros;
      else if (v == "noise") c.mask_fill = MaskFill::kNoise;
      else throw ConfigError("mask_fill must be zeros or noise");
    } else if (k == "learning_rate") {
      c.learning_rate = parse_real(k, v);
    } else if (k == "steps") {
      c.steps = parse_uint(k, v);
    } else if (k == "batch_size") {
      c.batch_size = parse_uint(k, v);
    } else if (k == "seed") {
      c.seed = parse_uint(k, v);
    } else if (k == "loss_normalization") {
      if (v == "masked-mean") c.loss_normalization = LossNormalization::kMaskedMean;
      else if (v == "global-mean") c.loss_normalization = LossNormalization::kGlobalMean;
      else throw ConfigError("loss_normalization must be masked-mean or global-mean");
    } else if (k == "noise_target") {
      if (v == "input") c.noise_target = NoiseTarget::kInput;
      else if (v == "reference") c.noise_target = NoiseTarget::kReference;
      else throw ConfigError("noise_target must be input or reference");
    } else if (k == "weight_decay") {
      c.weight_decay = parse_real(k, v);
    } else if (k == "beta1") {
      c.beta1 = parse_real(k, v);
    } else if (k == "beta2") {
      c.beta2 = parse_real(k, v);
    } else if (k == "adam_eps") {
      c.adam_eps = parse_real(k, v);
    } else if (k == "checkpoint_every") {
      c.checkpoint_every = parse_uint(k, v);
    } else if (k == "out_dir") {
      c.out_dir = v;
    } else {
      throw ConfigError("unknown train config key '" + k + "' (line " + std::to_string(lineno) + ")");
    }
  }
  if (c.steps < 1) throw ConfigError("steps must be >= 1");
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(c.learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open train config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

std::string format_train_config(const TrainConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "dilation_radius = " << c.dilation_radius << '\n'
      << "mask_fill = " << (c.mask_fill == MaskFill::kZeros ? "zeros" : "noise") << '\n'
      << "learning_rate = " << c.learning_rate << '\n'
      << "steps = " << c.steps << '\n'
      << "batch_size = " << c.batch_size << '\n'
      << "seed = " << c.seed << '\n'
      << "loss_normalization = "
      << (c.loss_normalization == LossNormalization::kMaskedMean ? "masked-mean" : "global-mean") << '\n'
      << "noise_target = " << (c.noise_target == NoiseTarget::kInput ? "input" : "reference") << '\n'
      << "weight_decay = " << c.weight_decay << '\n'
      << "beta1 = " << c.beta1 << '\n'
      << "beta2 = " << c.beta2 << '\n'
      << "adam_eps = " << c.adam_eps << '\n'
      << "checkpoint_every = " << c.checkpoint_every << '\n';
  if (!c.out_dir.empty()) out << "out_dir = " << c.out_dir.string() << '\n';
  return out.str();
}

Mask dilate_mask(const Mask& mask, std::size_t radius) { return dilate(mask, radius); }

Image masked_input(const Image& image, const Mask& mask, MaskFill fill, Rng* rng) {
  if (image.height() != mask.height() || image.width() != mask.width()) {
    throw ShapeError("masked_input: mask size differs from image size");
  }
  if (fill == MaskFill::kNoise && rng == nullptr) throw ConfigError("noise fill needs an RNG");
  Image out = image;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t y = 0; y < image.height(); ++y)
    for (std::size_t x = 0; x < image.width(); ++x) {
      if (!mask(y, x)) continue;
      for (std::size_t c = 0; c < 3; ++c) out.at(c, y, x) = fill == MaskFill::kZeros ? 0.0 : u(*rng);
    }
  return out;
}

ad::Var masked_loss(const Tensor& eps, const ad::Var& eps_hat, const Tensor& m_lat,
                    LossNormalization normalization) {
  if (eps.shape() != eps_hat.shape()) throw ShapeError("masked_loss: eps and eps_hat differ in shape");
  Tensor mask;
  if (m_lat.shape() == eps.shape()) {
    mask = m_lat;
  } else if (eps.ndim() == 3 && m_lat.shape() == Shape{1, eps.dim(1), eps.dim(2)}) {
    mask = Tensor(eps.shape());
    const std::size_t plane = eps.dim(1) * eps.dim(2);
    for (std::size_t c = 0; c < eps.dim(0); ++c)
      for (std::size_t i = 0; i < plane; ++i) mask[c * plane + i] = m_lat[i];
  } else {
    throw ShapeError("masked_loss: mask shape " + shape_str(m_lat.shape()) + " incompatible with " +
                     shape_str(eps.shape()));
  }
  const ad::Var residual = ad::mul(ad::sub(ad::Var::constant(eps), eps_hat), ad::Var::constant(mask));
  const ad::Var total = ad::sum(ad::square(residual));
  double denom = static_cast<double>(mask.size());
  if (normalization == LossNormalization::kMaskedMean) {
    denom = mask.sum();
    if (denom == 0.0) return ad::scale(total, 0.0);
  }
  return ad::scale(total, 1.0 / denom);
}

void AdamW::step(const std::vector<std::pair<std::string, ad::Var>>& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (const auto& [name, var] : params) {
    const Tensor g = var.grad();
    ad::Var handle = var;
    Tensor& p = handle.mutable_value();
    auto [mit, _] = m_.try_emplace(name, Tensor(p.shape()));
    auto [vit, __] = v_.try_emplace(name, Tensor(p.shape()));
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
      v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_) + wd_ * p[i];
      p[i] -= lr_ * update;
    }
  }
}

ad::Var training_loss(const std::vector<const Triplet*>& batch, const DatasetManifest& manifest,
                      const Model& model, const TrainConfig& config, Rng& rng, std::size_t step,
                      const TrainHooks& hooks) {
  if (batch.empty()) throw ConfigError("empty batch");
  DataCache cache(manifest);
  std::vector<ad::Var> losses;
  for (const Triplet* t : batch) losses.push_back(sample_loss(cache.get(t), model, config, rng, step, hooks));
  ad::Var total = losses[0];
  for (std::size_t i = 1; i < losses.size(); ++i) total = ad::add(total, losses[i]);
  return ad::scale(total, 1.0 / static_cast<double>(losses.size()));
}

TrainState train(const DatasetManifest& manifest, Model& model, const TrainConfig& config,
                 const TrainHooks& hooks) {
  std::vector<const Triplet*> pool;
  for (const auto& r : manifest.records())
    if (r.split == Split::kTrain) pool.push_back(&r);
  if (pool.empty()) throw ConfigError("manifest has no train records");
  if (config.steps < 1) throw ConfigError("steps must be >= 1");
  if (config.batch_size < 1) throw ConfigError("batch_size must be >= 1");

  auto params = trainable(model.predictor.params());
  for (auto& p : trainable(model.cpe.params())) params.push_back(std::move(p));
  for (const auto& [name, _] : params) {
    if (name.rfind("lora.", 0) != 0 && name.rfind("cpe.", 0) != 0) {
      throw TrainingError("parameter '" + name + "' is trainable but is neither adapter nor CPE");
    }
  }

  TrainState state;
  for (const auto& [name, _] : params) state.optimized.push_back(name);
  AdamW opt(config.learning_rate, config.beta1, config.beta2, config.adam_eps, config.weight_decay);
  Rng rng(config.seed);
  DataCache cache(manifest);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  const auto start = std::chrono::steady_clock::now();
  if (!config.out_dir.empty()) {
    std::filesystem::create_directories(config.out_dir);
    std::ofstream(config.out_dir / "train_config.txt") << format_train_config(config);
  }

  for (std::size_t step = 1; step <= config.steps; ++step) {
    std::vector<ad::Var> losses;
    std::vector<std::string> ids;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const Triplet* t = pool[pick(rng)];
      ids.push_back(t->id);
      losses.push_back(sample_loss(cache.get(t), model, config, rng, step, hooks));
    }
    ad::Var total = losses[0];
    for (std::size_t i = 1; i < losses.size(); ++i) total = ad::add(total, losses[i]);
    total = ad::scale(total, 1.0 / static_cast<double>(losses.size()));
    const double value = total.value()[0];
    if (!std::isfinite(value)) {
      std::vector<double> per;
      for (const auto& l : losses) per.push_back(l.value()[0]);
      dump_diagnostics(config.out_dir, step, ids, per);
      throw TrainingError("non-finite loss at step " + std::to_string(step));
    }
    model.predictor.params().zero_grad();
    model.cpe.params().zero_grad();
    ad::backward(total);
    opt.step(params);

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    state.history.push_back({step, value, wall});
    state.step = step;
    if (hooks.on_step) hooks.on_step(state.history.back());
    if (!config.out_dir.empty() && config.checkpoint_every > 0 && step % config.checkpoint_every == 0 &&
        step != config.steps) {
      save_model(model, config.out_dir / ("checkpoint-" + std::to_string(step) + ".bin"));
    }
  }
  state.adam_m = opt.first_moments();
  state.adam_v = opt.second_moments();
  std::ostringstream rs;
  rs << rng;
  state.rng_state = rs.str();
  if (!config.out_dir.empty()) {
    save_model(model, config.out_dir / "checkpoint.bin");
    write_loss_history(state.history, config.out_dir / "loss.jsonl");
  }
  return state;
}

namespace {

double pretrain_lr_factor(std::size_t step, const PretrainConfig& c) {
  if (step < c.warmup_steps) return static_cast<double>(step + 1) / static_cast<double>(c.warmup_steps);
  const double span = static_cast<double>(std::max<std::size_t>(1, c.steps - c.warmup_steps));
  const double progress = static_cast<double>(step - c.warmup_steps) / span;
  return 0.1 + 0.45 * (1.0 + std::cos(std::numbers::pi * progress));
}

// Uniform ellipse of random color, size 2 to 1/4 of the short side.
void paste_blob(Image& img, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double h = static_cast<double>(img.height()), w = static_cast<double>(img.width());
  const double lo = 2.0, hi = std::max(lo, std::min(h, w) / 4.0);
  const double ry = lo + unit(rng) * (hi - lo), rx = lo + unit(rng) * (hi - lo);
  const double cy = unit(rng) * h, cx = unit(rng) * w;
  const double rgb[3] = {unit(rng), unit(rng), unit(rng)};
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x) {
      const double dy = (static_cast<double>(y) - cy) / ry, dx = (static_cast<double>(x) - cx) / rx;
      if (dy * dy + dx * dx > 1.0) continue;
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = rgb[c];
    }
}

}  // namespace

std::vector<double> pretrain_backbone(Model& model, const std::vector<Image>& normals,
                                      const PretrainConfig& config) {
  if (normals.empty()) throw ConfigError("pretraining needs at least one normal image");
  auto& ps = model.predictor.params();
  const std::vector<std::string> previously = ps.trainable_names();
  std::vector<std::pair<std::string, ad::Var>> params;
  for (const auto& n : ps.names()) {
    if (n.rfind("unet.", 0) != 0) continue;
    ps.set_trainable(n, true);
    params.emplace_back(n, ps.get(n));
  }
  for (const auto& n : previously) ps.set_trainable(n, false);

  const ad::Var cond = model.null_condition();
  const std::size_t f = model.codec->factor();
  const Tensor empty_mask(
      {model.config.predictor.extra_channels, normals[0].height() / f, normals[0].width() / f});

  AdamW opt(config.learning_rate, 0.9, 0.999, 1e-8, 0.0);
  Rng rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, normals.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_t(1, model.schedule.T());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> history;
  for (std::size_t step = 0; step < config.steps; ++step) {
    opt.set_learning_rate(config.learning_rate * pretrain_lr_factor(step, config));
    ad::Var total;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      Image img = normals[pick(rng)];
      if (unit(rng) < config.blob_probability) paste_blob(img, rng);
      const Tensor z0 = model.codec->encode(img);
      const std::size_t t = pick_t(rng);
      const Tensor eps = randn(z0.shape(), rng);
      std::vector<ad::Var> parts{ad::Var::constant(forward_noise(z0, t, eps, model.schedule))};
      if (model.config.predictor.extra_channels > 0) parts.push_back(ad::Var::constant(empty_mask));
      const ad::Var eps_hat = model.predictor.forward(ad::concat0(parts), t, cond);
      const ad::Var l = ad::mean(ad::square(ad::sub(eps_hat, ad::Var::constant(eps))));
      total = b == 0 ? l : ad::add(total, l);
    }
    total = ad::scale(total, 1.0 / static_cast<double>(config.batch_size));
    if (!std::isfinite(total.value()[0])) {
      throw TrainingError("non-finite pretraining loss at step " + std::to_string(step + 1));
    }
    ps.zero_grad();
    ad::backward(total);
    opt.step(params);
    history.push_back(total.value()[0]);
  }
  for (const auto& [n, _] : params) ps.set_trainable(n, false);
  for (const auto& n : previously) ps.set_trainable(n, true);
  ps.zero_grad();
  return history;
}

void write_loss_history(const std::vector<LossRecord>& history, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write loss history '" + path.string() + "'");
  for (const auto& r : history) {
    out << nlohmann::json{{"step", r.step}, {"loss", r.loss}, {"wall_time", r.wall_time}}.dump() << '\n';
  }
}

}  // namespace anomagic
