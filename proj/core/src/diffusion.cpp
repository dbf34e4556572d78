// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#include "anomagic/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "anomagic/errors.hpp"
#include "anomagic/morphology.hpp"

namespace anomagic {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
}

// Binary checkpoint primitives (little-endian host assumed, as written).
template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("checkpoint truncated");
  return v;
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint64_t>(in);
  if (n > (1ULL << 32)) throw IoError("checkpoint string length implausible");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw IoError("checkpoint truncated");
  return s;
}

constexpr char kMagic[8] = {'A', 'N', 'M', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint8_t kDtypeF64 = 1;

}  // namespace

NoiseSchedule::NoiseSchedule(std::vector<double> alphas) : alphas_(std::move(alphas)) {
  if (alphas_.empty()) throw ConfigError("noise schedule needs T >= 1");
  for (std::size_t i = 0; i < alphas_.size(); ++i) {
    const double a = alphas_[i];
    if (!(a > 0.0 && a <= 1.0)) {
      throw ConfigError("alpha_" + std::to_string(i + 1) + " = " + std::to_string(a) +
                        " outside (0, 1]");
    }
    if (i > 0 && a > alphas_[i - 1]) {
      throw ConfigError("noise schedule increases at t = " + std::to_string(i + 1));
    }
  }
}

NoiseSchedule NoiseSchedule::linear(std::size_t T, double alpha_max, double alpha_min) {
  if (T == 0) throw ConfigError("noise schedule needs T >= 1");
  std::vector<double> a(T);
  for (std::size_t i = 0; i < T; ++i) {
    const double u = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
    a[i] = alpha_max * (1.0 - u) + alpha_min * u;
  }
  return NoiseSchedule(std::move(a));
}

double NoiseSchedule::alpha(std::size_t t) const {
  if (t > alphas_.size()) {
    throw RangeError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(T()) + "]");
  }
  return t == 0 ? 1.0 : alphas_[t - 1];
}

Tensor forward_noise(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& s) {
  if (t < 1 || t > s.T()) {
    throw RangeError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(s.T()) + "]");
  }
  require_same_shape(z0, eps, "forward_noise");
  const double a = s.alpha(t);
  const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
  Tensor out(z0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sa * z0[i] + sn * eps[i];
  return out;
}

Tensor predict_z0(const Tensor& z_t, std::size_t t, const Tensor& eps_hat, const NoiseSchedule& s) {
  require_same_shape(z_t, eps_hat, "predict_z0");
  const double a = s.alpha(t);
  const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
  Tensor out(z_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (z_t[i] - sn * eps_hat[i]) / sa;
  return out;
}

Tensor ddim_step(const Tensor& z_t, std::size_t t, std::size_t t_prev, const Tensor& eps_hat,
                 const NoiseSchedule& s) {
  if (t <= t_prev) {
    throw RangeError("ddim_step needs t > t_prev, got " + std::to_string(t) + " <= " +
                     std::to_string(t_prev));
  }
  Tensor z0 = predict_z0(z_t, t, eps_hat, s);
  if (t_prev == 0) return z0;
  const double ap = s.alpha(t_prev);
  const double sa = std::sqrt(ap), sn = std::sqrt(1.0 - ap);
  for (std::size_t i = 0; i < z0.size(); ++i) z0[i] = sa * z0[i] + sn * eps_hat[i];
  return z0;
}

std::vector<std::size_t> ddim_timesteps(std::size_t T, std::size_t steps) {
  if (steps == 0) throw RangeError("sampler needs at least one step");
  if (steps > T) throw RangeError("more sampler steps than timesteps");
  std::vector<std::size_t> ts(steps);
  for (std::size_t i = 0; i < steps; ++i) ts[steps - 1 - i] = (i + 1) * T / steps;
  return ts;
}

Tensor sample(const EpsFn& eps, const Tensor& z_T, std::size_t steps, const NoiseSchedule& s,
              const StepHook& after_step) {
  const auto ts = ddim_timesteps(s.T(), steps);
  Tensor z = z_T;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const std::size_t t = ts[i];
    const std::size_t t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    Tensor e = eps(z, t);
    z = ddim_step(z, t, t_prev, e, s);
    if (after_step) z = after_step(std::move(z), t_prev);
  }
  return z;
}

Tensor inpaint_blend(const Tensor& z_gen, const Tensor& z_known_t, const Tensor& m_lat) {
  require_same_shape(z_gen, z_known_t, "inpaint_blend");
  require_same_shape(z_gen, m_lat, "inpaint_blend");
  Tensor out(z_gen.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    // Select rather than multiply so a 0/1 mask copies values bit for bit.
    const double m = m_lat[i];
    if (m == 1.0) {
      out[i] = z_gen[i];
    } else if (m == 0.0) {
      out[i] = z_known_t[i];
    } else {
      out[i] = z_gen[i] * m + z_known_t[i] * (1.0 - m);
    }
  }
  return out;
}

std::string to_string(CodecKind kind) {
  switch (kind) {
    case CodecKind::kIdentityDownsample:
      return "identity-downsample";
    case CodecKind::kLearned:
      return "learned";
    case CodecKind::kExternal:
      return "external-adapter";
  }
  return "unknown";
}

Tensor LatentCodec::cell_mask(const Mask& pixel_mask) const {
  const std::size_t f = factor();
  if (pixel_mask.height() % f || pixel_mask.width() % f) {
    throw ShapeError("mask size not divisible by the codec factor");
  }
  return any_pool(pixel_mask, pixel_mask.height() / f, pixel_mask.width() / f).to_tensor();
}

IdentityCodec::IdentityCodec(std::size_t factor) : f_(factor) {
  if (f_ == 0) throw ConfigError("codec factor must be >= 1");
}

Tensor IdentityCodec::encode(const Image& image) const {
  const std::size_t H = image.height(), W = image.width();
  if (H % f_ || W % f_) {
    throw ShapeError("image " + std::to_string(H) + "x" + std::to_string(W) +
                     " not divisible by codec factor " + std::to_string(f_));
  }
  const std::size_t h = H / f_, w = W / f_;
  Tensor z({latent_channels(), h, w});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t dy = 0; dy < f_; ++dy)
      for (std::size_t dx = 0; dx < f_; ++dx) {
        const std::size_t lc = (c * f_ + dy) * f_ + dx;
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) z.at(lc, y, x) = image.at(c, y * f_ + dy, x * f_ + dx);
      }
  return z;
}

Image IdentityCodec::decode(const Tensor& latent) const {
  if (latent.ndim() != 3 || latent.dim(0) != latent_channels()) {
    throw ShapeError("latent must be [" + std::to_string(latent_channels()) + ",h,w], got " +
                     shape_str(latent.shape()));
  }
  const std::size_t h = latent.dim(1), w = latent.dim(2);
  Image img(h * f_, w * f_);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t dy = 0; dy < f_; ++dy)
      for (std::size_t dx = 0; dx < f_; ++dx) {
        const std::size_t lc = (c * f_ + dy) * f_ + dx;
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) img.at(c, y * f_ + dy, x * f_ + dx) = latent.at(lc, y, x);
      }
  return img;
}

Tensor IdentityCodec::latent_mask(const Mask& pixel_mask) const {
  Image m(pixel_mask.height(), pixel_mask.width());
  for (std::size_t y = 0; y < m.height(); ++y)
    for (std::size_t x = 0; x < m.width(); ++x)
      for (std::size_t c = 0; c < 3; ++c) m.at(c, y, x) = pixel_mask(y, x) ? 1.0 : 0.0;
  return encode(m);
}

ad::Var wire_condition(const ad::Var& p_c, const ad::Var* native, ConditionWiring wiring) {
  if (wiring == ConditionWiring::kReplace) return p_c;
  if (native == nullptr) throw ConfigError("alongside-native wiring needs native condition tokens");
  const ad::Var parts[] = {*native, p_c};
  return ad::concat0(parts);
}

Tensor timestep_embedding(std::size_t t, std::size_t width) {
  if (width < 2 || width % 2) throw ConfigError("timestep embedding width must be even");
  const std::size_t half = width / 2;
  Tensor e({width});
  for (std::size_t i = 0; i < half; ++i) {
    const double f = std::exp(-std::log(1000.0) * static_cast<double>(i) / static_cast<double>(half));
    const double a = static_cast<double>(t) * f;
    e[i] = std::sin(a);
    e[half + i] = std::cos(a);
  }
  return e;
}

NoisePredictor::NoisePredictor(PredictorConfig config, std::uint64_t seed) : config_(config) {
  const auto& c = config_;
  if (c.latent_channels == 0 || c.width1 == 0 || c.width2 == 0 || c.cond_dim == 0) {
    throw ConfigError("predictor widths must be positive");
  }
  if (c.width1 % 2 || c.width2 % 2) throw ConfigError("predictor widths must be even");
  if (c.heads == 0 || c.width1 % c.heads || c.width2 % c.heads) {
    throw ConfigError("predictor widths must be divisible by the head count");
  }
  Rng rng(seed);
  const std::size_t cin = c.latent_channels + c.extra_channels;
  nn::add_conv(params_, "unet.conv_in", cin, c.width1, 3, true, rng);
  nn::add_linear(params_, "unet.t1", c.width1, c.width1, true, true, rng);
  nn::add_conv(params_, "unet.res1", c.width1, c.width1, 3, true, rng);
  nn::add_conv(params_, "unet.down", c.width1, c.width2, 3, true, rng);
  nn::add_linear(params_, "unet.t2", c.width2, c.width2, true, true, rng);
  nn::add_conv(params_, "unet.res2", c.width2, c.width2, 3, true, rng);
  nn::add_conv(params_, "unet.up", c.width2, c.width1, 3, true, rng);
  nn::add_conv(params_, "unet.res3", c.width1, c.width1, 3, true, rng);
  nn::add_conv(params_, "unet.conv_out", c.width1, c.latent_channels, 3, true, rng);
  const std::pair<const char*, std::size_t> xs[] = {{"unet.x1", c.width1}, {"unet.x2", c.width2},
                                                    {"unet.x3", c.width1}};
  for (const auto& [name, w] : xs) {
    const std::string p(name);
    nn::add_layer_norm(params_, p + ".ln", w, true);
    nn::add_linear(params_, p + ".q", w, w, false, true, rng);
    nn::add_linear(params_, p + ".k", c.cond_dim, w, false, true, rng);
    nn::add_linear(params_, p + ".v", c.cond_dim, w, false, true, rng);
    nn::add_linear(params_, p + ".o", w, w, false, true, rng);
  }
}

std::vector<std::string> NoisePredictor::cross_attention_projections() const {
  std::vector<std::string> out;
  for (const char* x : {"unet.x1", "unet.x2", "unet.x3"})
    for (const char* p : {".q", ".k", ".v", ".o"}) out.push_back(std::string(x) + p);
  return out;
}

void NoisePredictor::apply_lora(const std::vector<std::string>& targets, std::size_t rank,
                                double scale, std::uint64_t seed, double a_init_std) {
  if (rank == 0) throw ConfigError("LoRA rank must be >= 1");
  const auto known = cross_attention_projections();
  for (const auto& t : targets) {
    if (std::find(known.begin(), known.end(), t) == known.end()) {
      throw ConfigError("LoRA target '" + t + "' is not a cross-attention projection");
    }
    if (adapter_for(t) != nullptr) throw ConfigError("LoRA target '" + t + "' already adapted");
  }
  Rng rng(seed);
  for (const auto& name : params_.names()) params_.set_trainable(name, false);
  for (const auto& t : targets) {
    const Tensor& W = params_.get(t + ".weight").value();
    nn::LoraAdapter a{t, rank, scale};
    params_.add(a.a_name(), randn({rank, W.dim(1)}, rng, a_init_std), true);
    params_.add(a.b_name(), Tensor::zeros({W.dim(0), rank}), true);
    adapters_.push_back(std::move(a));
  }
}

void NoisePredictor::merge_lora() {
  for (const auto& a : adapters_) {
    Tensor merged = nn::merged_weight(params_, a);
    params_.load({{a.target + ".weight", std::move(merged)}}, false);
    params_.erase(a.a_name());
    params_.erase(a.b_name());
  }
  adapters_.clear();
}

const nn::LoraAdapter* NoisePredictor::adapter_for(const std::string& target) const {
  for (const auto& a : adapters_)
    if (a.target == target) return &a;
  return nullptr;
}

ad::Var NoisePredictor::time_embedding(const std::string& prefix, std::size_t t,
                                       std::size_t width) const {
  const ad::Var e = ad::Var::constant(timestep_embedding(t, width).reshaped({1, width}));
  return ad::reshape(nn::linear(params_, prefix, e), {width});
}

ad::Var NoisePredictor::cross_attention(const std::string& prefix, const ad::Var& h,
                                        const ad::Var& cond) const {
  const std::size_t C = h.shape()[0], H = h.shape()[1], W = h.shape()[2];
  const ad::Var tokens = ad::transpose(ad::reshape(h, {C, H * W}));
  const ad::Var normed = nn::layer_norm(params_, prefix + ".ln", tokens);
  const ad::Var q = nn::linear(params_, prefix + ".q", normed, adapter_for(prefix + ".q"));
  const ad::Var k = nn::linear(params_, prefix + ".k", cond, adapter_for(prefix + ".k"));
  const ad::Var v = nn::linear(params_, prefix + ".v", cond, adapter_for(prefix + ".v"));
  const ad::Var att = nn::attention(q, k, v, config_.heads);
  const ad::Var o = nn::linear(params_, prefix + ".o", att, adapter_for(prefix + ".o"));
  return ad::add(h, ad::reshape(ad::transpose(o), {C, H, W}));
}

ad::Var NoisePredictor::forward(const ad::Var& x, std::size_t t, const ad::Var& cond) const {
  const auto& c = config_;
  const std::size_t cin = c.latent_channels + c.extra_channels;
  if (x.shape().size() != 3 || x.shape()[0] != cin) {
    throw ShapeError("predictor input must be [" + std::to_string(cin) + ",h,w], got " +
                     shape_str(x.shape()));
  }
  if (x.shape()[1] % 2 || x.shape()[2] % 2) throw ShapeError("latent size must be even");
  if (cond.shape().size() != 2 || cond.shape()[1] != c.cond_dim) {
    throw ShapeError("condition must be [N," + std::to_string(c.cond_dim) + "], got " +
                     shape_str(cond.shape()));
  }
  using ad::silu;
  ad::Var h = ad::add_channel_bias(nn::conv(params_, "unet.conv_in", x, 1),
                                   time_embedding("unet.t1", t, c.width1));
  h = ad::add(h, silu(nn::conv(params_, "unet.res1", silu(h), 1)));
  h = cross_attention("unet.x1", h, cond);
  const ad::Var skip = h;

  ad::Var d = ad::add_channel_bias(nn::conv(params_, "unet.down", ad::avg_pool(h, 2), 1),
                                   time_embedding("unet.t2", t, c.width2));
  d = ad::add(d, silu(nn::conv(params_, "unet.res2", silu(d), 1)));
  d = cross_attention("unet.x2", d, cond);

  ad::Var u = ad::add(nn::conv(params_, "unet.up", ad::upsample_nearest(d, 2), 1), skip);
  u = ad::add(u, silu(nn::conv(params_, "unet.res3", silu(u), 1)));
  u = cross_attention("unet.x3", u, cond);
  return nn::conv(params_, "unet.conv_out", silu(u), 1);
}

Tensor NoisePredictor::predict(const Tensor& z_t, const Tensor& extra, std::size_t t,
                               const ad::Var& cond) const {
  std::vector<ad::Var> parts{ad::Var::constant(z_t)};
  if (config_.extra_channels > 0) parts.push_back(ad::Var::constant(extra));
  return forward(ad::concat0(parts), t, cond).value();
}

std::uint64_t NoisePredictor::base_checksum() const {
  return params_.checksum([](const std::string& n) { return n.rfind("lora.", 0) != 0; });
}

std::map<std::string, Tensor> select_prefix(const nn::ParameterStore& ps, const std::string& prefix) {
  std::map<std::string, Tensor> out;
  for (const auto& n : ps.names())
    if (n.rfind(prefix, 0) == 0) out.emplace(n, ps.get(n).value());
  return out;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, ckpt.version);
    put_string(out, ckpt.metadata);
    put<std::uint64_t>(out, ckpt.segments.size());
    for (const auto& [seg, tensors] : ckpt.segments) {
      put_string(out, seg);
      put<std::uint64_t>(out, tensors.size());
      for (const auto& [name, t] : tensors) {
        put_string(out, name);
        put<std::uint8_t>(out, kDtypeF64);
        put<std::uint64_t>(out, t.ndim());
        for (auto d : t.shape()) put<std::uint64_t>(out, d);
        out.write(reinterpret_cast<const char*>(t.data().data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
      }
    }
    if (!out) throw IoError("write failed for checkpoint '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("'" + path.string() + "' is not an anomagic checkpoint");
  }
  Checkpoint ckpt;
  ckpt.version = get<std::uint32_t>(in);
  if (ckpt.version != Checkpoint::kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  ckpt.metadata = get_string(in);
  const auto n_seg = get<std::uint64_t>(in);
  for (std::uint64_t s = 0; s < n_seg; ++s) {
    const std::string seg = get_string(in);
    auto& tensors = ckpt.segments[seg];
    const auto n = get<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < n; ++i) {
      const std::string name = get_string(in);
      if (get<std::uint8_t>(in) != kDtypeF64) throw IoError("unsupported tensor dtype in '" + name + "'");
      const auto nd = get<std::uint64_t>(in);
      if (nd > 8) throw IoError("tensor '" + name + "' has implausible rank");
      Shape shape(nd);
      for (auto& d : shape) d = get<std::uint64_t>(in);
      Tensor t(shape);
      in.read(reinterpret_cast<char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
      if (!in) throw IoError("checkpoint truncated in '" + name + "'");
      tensors.emplace(name, std::move(t));
    }
  }
  return ckpt;
}

}  // namespace anomagic
