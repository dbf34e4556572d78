// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#include "anomagic/generation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <set>

#include <nlohmann/json.hpp>

#include "anomagic/errors.hpp"
#include "anomagic/rng.hpp"

namespace anomagic {

namespace {

using nlohmann::json;

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

}  // namespace

// ---- retrieval ------------------------------------------------------------

std::vector<std::string> split_categories(const std::string& answer) {
  std::string s = answer;
  // " and " / " or " act as separators in enumerations.
  for (const std::string sep : {" and ", " or "}) {
    for (std::size_t pos; (pos = lower(s).find(sep)) != std::string::npos;) s.replace(pos, sep.size(), ",");
  }
  std::vector<std::string> out;
  std::set<std::string> seen;
  std::string cur;
  auto flush = [&] {
    std::string c = trim(cur);
    while (!c.empty() && std::ispunct(static_cast<unsigned char>(c.back()))) c.pop_back();
    c = trim(c);
    if (!c.empty() && seen.insert(lower(c)).second) out.push_back(c);
    cur.clear();
  };
  for (char ch : s) {
    if (ch == ',' || ch == ';' || ch == '\n') {
      flush();
    } else {
      cur += ch;
    }
  }
  flush();
  return out;
}

RetrievalResult retrieve(const RetrievalQuery& query, const DatasetManifest& manifest,
                         MllmClient& client) {
  if (trim(query.query).empty()) throw ValidationError("retrieval query is empty");
  RetrievalResult r;
  try {
    r.answer = client.ask(query.query);
  } catch (const Error& e) {
    throw RetrievalError(std::string("MLLM query failed: ") + e.what());
  }
  r.categories = split_categories(r.answer);

  std::vector<const Triplet*> pool;
  for (const auto& t : manifest.records()) {
    if (query.category_hint) {
      const std::string hint = lower(*query.category_hint);
      if (lower(t.category) != hint && lower(t.defect_type) != hint) continue;
    }
    pool.push_back(&t);
  }
  std::vector<std::string> types;
  for (const auto* t : pool) {
    if (std::find(types.begin(), types.end(), t->defect_type) == types.end()) types.push_back(t->defect_type);
  }

  std::set<std::string> matched;
  for (const auto& c : r.categories) {
    bool exact = false;
    for (const auto& d : types) {
      if (lower(c) == lower(d)) {
        r.matches.push_back({c, d, true});
        matched.insert(d);
        exact = true;
      }
    }
    if (exact) continue;
    for (const auto& d : types) {
      std::string verdict;
      try {
        verdict = client.ask(adjudication_question(c, d));
      } catch (const Error& e) {
        throw RetrievalError(std::string("MLLM adjudication failed: ") + e.what());
      }
      if (parse_yes(verdict)) {
        r.matches.push_back({c, d, false});
        matched.insert(d);
      }
    }
  }
  for (const auto* t : pool) {
    if (matched.count(t->defect_type)) r.triplet_ids.push_back(t->id);
  }
  if (r.triplet_ids.empty()) {
    std::string diag = "no manifest defect type matches the answer '" + r.answer + "'";
    if (types.empty()) {
      diag += "; no records pass the category filter";
    } else {
      diag += "; nearest literal matches:";
      for (const auto& c : r.categories) {
        const auto best = std::min_element(types.begin(), types.end(), [&](const auto& a, const auto& b) {
          return edit_distance(lower(c), lower(a)) < edit_distance(lower(c), lower(b));
        });
        diag += " " + c + " -> " + *best + ";";
      }
      if (r.categories.empty()) diag += " (answer named no categories)";
    }
    r.diagnostic = diag;
  }
  return r;
}

// ---- coarse masks ---------------------------------------------------------

std::string to_string(MaskShape shape) {
  switch (shape) {
    case MaskShape::kEllipse: return "ellipse";
    case MaskShape::kPolygon: return "polygon";
    case MaskShape::kBrushStroke: return "brush-stroke";
    case MaskShape::kFromFile: return "from-file";
  }
  return "?";
}

std::string to_string(MaskPlacement placement) {
  switch (placement) {
    case MaskPlacement::kUniform: return "uniform";
    case MaskPlacement::kCenterBiased: return "center-biased";
    case MaskPlacement::kWithinForeground: return "within-foreground-mask";
  }
  return "?";
}

MaskShape parse_mask_shape(const std::string& s) {
  for (auto v : {MaskShape::kEllipse, MaskShape::kPolygon, MaskShape::kBrushStroke, MaskShape::kFromFile}) {
    if (s == to_string(v)) return v;
  }
  throw ConfigError("unknown mask shape '" + s + "'");
}

MaskPlacement parse_mask_placement(const std::string& s) {
  for (auto v : {MaskPlacement::kUniform, MaskPlacement::kCenterBiased, MaskPlacement::kWithinForeground}) {
    if (s == to_string(v)) return v;
  }
  throw ConfigError("unknown mask placement '" + s + "'");
}

CoarseMaskSpec parse_mask_spec(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("mask spec: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("mask spec must be a JSON object");
  static const std::set<std::string> known{"shape", "min_area", "max_area", "placement", "seed",
                                           "max_ellipses", "max_retries", "file", "foreground"};
  CoarseMaskSpec s;
  try {
    for (const auto& [k, v] : j.items()) {
      if (!known.count(k)) throw ConfigError("mask spec: unknown key '" + k + "'");
    }
    if (j.contains("shape")) s.shape = parse_mask_shape(j["shape"].get<std::string>());
    if (j.contains("placement")) s.placement = parse_mask_placement(j["placement"].get<std::string>());
    s.min_area = j.value("min_area", s.min_area);
    s.max_area = j.value("max_area", s.max_area);
    s.seed = j.value("seed", s.seed);
    s.max_ellipses = j.value("max_ellipses", s.max_ellipses);
    s.max_retries = j.value("max_retries", s.max_retries);
    if (j.contains("file")) s.file = j["file"].get<std::string>();
    if (j.contains("foreground")) s.foreground = read_mask(j["foreground"].get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("mask spec: ") + e.what());
  }
  return s;
}

std::string format_mask_spec(const CoarseMaskSpec& s) {
  json j{{"shape", to_string(s.shape)},   {"min_area", s.min_area},
         {"max_area", s.max_area},        {"placement", to_string(s.placement)},
         {"seed", s.seed},                {"max_ellipses", s.max_ellipses},
         {"max_retries", s.max_retries}};
  if (!s.file.empty()) j["file"] = s.file.string();
  return j.dump();
}

namespace {

struct Point {
  double y, x;
};

Point draw_centre(const CoarseMaskSpec& spec, std::size_t h, std::size_t w, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  switch (spec.placement) {
    case MaskPlacement::kUniform:
      return {unit(rng) * static_cast<double>(h), unit(rng) * static_cast<double>(w)};
    case MaskPlacement::kCenterBiased: {
      std::normal_distribution<double> ny(h / 2.0, 0.15 * h), nx(w / 2.0, 0.15 * w);
      return {std::clamp(ny(rng), 0.0, h - 1.0), std::clamp(nx(rng), 0.0, w - 1.0)};
    }
    case MaskPlacement::kWithinForeground: {
      const Mask& fg = *spec.foreground;
      std::uniform_int_distribution<std::size_t> pick(0, fg.count() - 1);
      std::size_t k = pick(rng);
      for (std::size_t i = 0; i < fg.data().size(); ++i) {
        if (fg.data()[i] && k-- == 0) return {static_cast<double>(i / w) + 0.5, static_cast<double>(i % w) + 0.5};
      }
    }
  }
  return {h / 2.0, w / 2.0};
}

// Pixel centres inside a rotated ellipse.
void paint_ellipse(Mask& m, Point c, double ry, double rx, double angle) {
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (std::size_t y = 0; y < m.height(); ++y)
    for (std::size_t x = 0; x < m.width(); ++x) {
      const double dy = static_cast<double>(y) + 0.5 - c.y, dx = static_cast<double>(x) + 0.5 - c.x;
      const double u = (dx * ca + dy * sa) / rx, v = (-dx * sa + dy * ca) / ry;
      if (u * u + v * v <= 1.0) m.set(y, x, true);
    }
}

Mask draw_ellipses(const CoarseMaskSpec& spec, std::size_t h, std::size_t w, double target, Rng& rng) {
  std::uniform_int_distribution<std::size_t> count(1, std::max<std::size_t>(1, spec.max_ellipses));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t k = count(rng);
  Mask m(h, w);
  const double anchor_spread = std::sqrt(target);
  const Point anchor = draw_centre(spec, h, w, rng);
  for (std::size_t i = 0; i < k; ++i) {
    const double area = target / static_cast<double>(k);
    const double aspect = 0.5 + 1.5 * unit(rng);
    const double ry = std::sqrt(area / (std::numbers::pi * aspect)), rx = ry * aspect;
    Point c = anchor;
    if (i > 0) {
      c.y += (unit(rng) - 0.5) * anchor_spread;
      c.x += (unit(rng) - 0.5) * anchor_spread;
    }
    paint_ellipse(m, c, ry, rx, unit(rng) * std::numbers::pi);
  }
  return m;
}

Mask draw_polygon(const CoarseMaskSpec& spec, std::size_t h, std::size_t w, double target, Rng& rng) {
  std::uniform_int_distribution<int> sides(5, 8);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = sides(rng);
  const double base = unit(rng) * 2.0 * std::numbers::pi;
  std::vector<double> radius(n), theta(n);
  for (int i = 0; i < n; ++i) {
    radius[i] = 0.6 + 0.8 * unit(rng);
    theta[i] = base + 2.0 * std::numbers::pi * (i + 0.8 * (unit(rng) - 0.5)) / n;
  }
  double unit_area = 0.0;  // shoelace on the star polygon
  for (int i = 0; i < n; ++i) {
    const int j = (i + 1) % n;
    unit_area += 0.5 * radius[i] * radius[j] * std::sin(theta[j] - theta[i]);
  }
  const double scale = std::sqrt(target / std::abs(unit_area));
  const Point c = draw_centre(spec, h, w, rng);
  std::vector<Point> v(n);
  for (int i = 0; i < n; ++i) {
    v[i] = {c.y + scale * radius[i] * std::sin(theta[i]), c.x + scale * radius[i] * std::cos(theta[i])};
  }
  Mask m(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double py = static_cast<double>(y) + 0.5, px = static_cast<double>(x) + 0.5;
      bool inside = false;
      for (int i = 0, j = n - 1; i < n; j = i++) {
        if ((v[i].y > py) != (v[j].y > py) &&
            px < (v[j].x - v[i].x) * (py - v[i].y) / (v[j].y - v[i].y) + v[i].x) {
          inside = !inside;
        }
      }
      if (inside) m.set(y, x, true);
    }
  return m;
}

// Random walk of round dabs, stopped once the target area is covered.
Mask draw_brush(const CoarseMaskSpec& spec, std::size_t h, std::size_t w, double target, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double r = std::max(0.75, std::sqrt(target) / 5.0);
  Point p = draw_centre(spec, h, w, rng);
  double heading = unit(rng) * 2.0 * std::numbers::pi;
  Mask m(h, w);
  const std::size_t need = static_cast<std::size_t>(std::llround(target));
  for (std::size_t step = 0; step < 4 * h * w && m.count() < need; ++step) {
    paint_ellipse(m, p, r, r, 0.0);
    heading += (unit(rng) - 0.5) * 0.8;
    p.y = std::clamp(p.y + r * std::sin(heading), 0.0, static_cast<double>(h));
    p.x = std::clamp(p.x + r * std::cos(heading), 0.0, static_cast<double>(w));
  }
  return m;
}

}  // namespace

Mask sample_coarse_mask(const CoarseMaskSpec& spec, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw ValidationError("mask resolution must be positive");
  if (spec.shape == MaskShape::kFromFile) {
    if (spec.file.empty()) throw ValidationError("from-file mask spec has no file");
    Mask m = read_mask(spec.file);
    if (m.height() != height || m.width() != width) {
      throw ShapeError("mask file '" + spec.file.string() + "' does not match the target resolution");
    }
    return m;
  }
  if (!(spec.min_area > 0.0 && spec.min_area <= spec.max_area && spec.max_area < 1.0)) {
    throw ValidationError("mask area range must satisfy 0 < min <= max < 1");
  }
  const double total = static_cast<double>(height * width);
  const auto lo = static_cast<std::size_t>(std::ceil(spec.min_area * total - 1e-9));
  const auto hi = static_cast<std::size_t>(std::floor(spec.max_area * total + 1e-9));
  if (lo > hi) {
    throw SamplingError("no whole-pixel area lies in the requested range at " + std::to_string(height) +
                        "x" + std::to_string(width));
  }
  if (spec.placement == MaskPlacement::kWithinForeground) {
    if (!spec.foreground) throw ValidationError("within-foreground placement needs a foreground mask");
    if (spec.foreground->height() != height || spec.foreground->width() != width) {
      throw ShapeError("foreground mask does not match the target resolution");
    }
    if (spec.foreground->count() < lo) {
      throw SamplingError("foreground has " + std::to_string(spec.foreground->count()) +
                          " pixels, fewer than the minimum mask area " + std::to_string(lo));
    }
  }
  Rng rng(spec.seed);
  std::uniform_real_distribution<double> area(static_cast<double>(lo), static_cast<double>(hi));
  for (std::size_t attempt = 0; attempt < std::max<std::size_t>(1, spec.max_retries); ++attempt) {
    const double target = area(rng);
    Mask m;
    switch (spec.shape) {
      case MaskShape::kEllipse: m = draw_ellipses(spec, height, width, target, rng); break;
      case MaskShape::kPolygon: m = draw_polygon(spec, height, width, target, rng); break;
      case MaskShape::kBrushStroke: m = draw_brush(spec, height, width, target, rng); break;
      case MaskShape::kFromFile: break;
    }
    if (spec.placement == MaskPlacement::kWithinForeground) m = m & *spec.foreground;
    const std::size_t n = m.count();
    if (n >= lo && n <= hi) return m;
  }
  throw SamplingError("no " + to_string(spec.shape) + " mask met the area range after " +
                      std::to_string(spec.max_retries) + " draws");
}

// ---- generation -----------------------------------------------------------

GenerationResult generate(const Image& target, const PromptInput& prompt, const std::string& provenance,
                          const CoarseMaskSpec& mask_spec, const Model& model,
                          const ChangeDetector& detector, const GenerationConfig& config,
                          std::uint64_t seed) {
  const std::size_t f = model.codec->factor();
  if (target.empty() || target.height() % f != 0 || target.width() % f != 0) {
    throw ShapeError("target size must be a positive multiple of the codec factor " + std::to_string(f));
  }
  const CrossmodalCondition cond = model.cpe.encode(prompt, *model.encoders.image, *model.encoders.text);
  const Mask coarse = sample_coarse_mask(mask_spec, target.height(), target.width());
  const Tensor z0 = model.codec->encode(target);
  const Tensor m_lat = model.codec->latent_mask(coarse);
  const Tensor cell = model.codec->cell_mask(coarse);

  Rng rng(seed);
  const std::size_t T = model.schedule.T();
  const Tensor z_T = inpaint_blend(randn(z0.shape(), rng), forward_noise(z0, T, randn(z0.shape(), rng), model.schedule),
                                   m_lat);
  const EpsFn eps = [&](const Tensor& z_t, std::size_t t) {
    return model.predictor.predict(z_t, cell, t, cond.p_c);
  };
  const StepHook blend = [&](Tensor z, std::size_t t_prev) {
    const Tensor known = t_prev == 0 ? z0 : forward_noise(z0, t_prev, randn(z0.shape(), rng), model.schedule);
    return inpaint_blend(z, known, m_lat);
  };
  const Tensor z = sample(eps, z_T, config.ddim_steps, model.schedule, blend);

  GenerationResult r;
  r.input = target;
  r.coarse_mask = coarse;
  r.generated = model.codec->decode(z).quantized();
  r.refined_mask = refine(target, r.generated, coarse, detector, config.refine);
  r.provenance = provenance;
  r.seed = seed;
  return r;
}

std::vector<GenerationResult> generate_batch(const BatchRequest& req, const DatasetManifest* manifest,
                                             const Model& model, const ChangeDetector& detector,
                                             const GenerationConfig& config) {
  if (req.candidates.empty() && !req.prompt) throw ValidationError("generation needs a triplet or a prompt");
  if (!req.candidates.empty() && manifest == nullptr) {
    throw ValidationError("triplet prompts need the manifest they came from");
  }
  std::vector<GenerationResult> out;
  std::size_t k = 0;
  for (std::size_t ti = 0; ti < req.targets.size(); ++ti) {
    for (std::size_t c = 0; c < req.count; ++c, ++k) {
      const std::uint64_t seed = derive_seed(req.seed, k);
      PromptInput prompt;
      json prov;
      if (!req.candidates.empty()) {
        std::size_t pick = k % req.candidates.size();
        if (req.selection == TripletSelection::kRandom) {
          Rng pick_rng(derive_seed(seed, 2));
          pick = std::uniform_int_distribution<std::size_t>(0, req.candidates.size() - 1)(pick_rng);
        }
        const Triplet& t = *req.candidates[pick];
        prompt.image = manifest->load_image(t);
        prompt.mask = manifest->load_mask(t);
        if (!t.caption.empty()) prompt.caption = t.caption;
        prov = {{"triplet_id", t.id}, {"defect_type", t.defect_type}, {"category", t.category}};
      } else {
        prompt = *req.prompt;
        prov = req.prompt_provenance.empty() ? json::object() : json::parse(req.prompt_provenance);
      }
      if (ti < req.target_names.size()) prov["target"] = req.target_names[ti];
      CoarseMaskSpec spec = req.mask_spec;
      spec.seed = derive_seed(seed, 1);
      out.push_back(generate(req.targets[ti], prompt, prov.dump(), spec, model, detector, config, seed));
    }
  }
  return out;
}

}  // namespace anomagic
