// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <ostream>
#include <sstream>

#include "anomagic/clients.hpp"
#include "anomagic/errors.hpp"
#include "anomagic/evaluation.hpp"
#include "anomagic/generation.hpp"
#include "anomagic/mask_refinement.hpp"
#include "anomagic/model.hpp"
#include "anomagic/trainer.hpp"
#include "anomagic/triplet_store.hpp"

namespace anomagic::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Global {
  std::uint64_t seed = 0;
  std::string log_level = "info";
  fs::path out_dir = "anomagic-out";
  fs::path registry;
};

ModelRegistry load_registry(const Global& g) {
  return g.registry.empty() ? ModelRegistry() : ModelRegistry::from_file(g.registry);
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const fs::path& p, const json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  out << j.dump(2) << '\n';
}

std::vector<fs::path> png_files(const fs::path& p) {
  std::vector<fs::path> out;
  if (fs::is_directory(p)) {
    for (const auto& e : fs::directory_iterator(p)) {
      if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
  } else {
    out.push_back(p);
  }
  if (out.empty()) throw IoError("no PNG files under '" + p.string() + "'");
  return out;
}

ModelConfig model_config(const fs::path& path, const Global& g) {
  if (path.empty()) {
    ModelConfig c;
    c.seed = g.seed;
    return c;
  }
  return model_config_from_json(read_text(path));
}

// ---- stats ----------------------------------------------------------------

struct StatsOpts {
  fs::path manifest;
};

int cmd_stats(const StatsOpts& o, const Global& g, std::ostream& out) {
  ManifestLoadOptions lo;
  lo.allow_uncaptioned = true;
  const DatasetManifest m = load_manifest(o.manifest, lo);
  const DatasetStats s = dataset_stats(m);
  out << "records: " << s.total << '\n' << "domains:\n" << std::fixed << std::setprecision(1);
  json j{{"total", s.total}, {"domains", json::array()}, {"defect_types", json::array()}};
  for (const auto& d : s.domains) {
    out << "  " << d.name << ' ' << d.count << ' ' << d.percent << "%\n";
    j["domains"].push_back({{"name", d.name}, {"count", d.count}, {"percent", d.percent}});
  }
  out << "defect types:\n";
  for (const auto& d : s.defect_ranking) {
    out << "  " << d.name << ' ' << d.count << ' ' << d.percent << "%\n";
    j["defect_types"].push_back({{"name", d.name}, {"count", d.count}, {"percent", d.percent}});
  }
  out << std::defaultfloat;
  write_json(g.out_dir / "stats.json", j);
  return 0;
}

// ---- build-dataset --------------------------------------------------------

struct BuildOpts {
  fs::path manifest;
  std::string captioner = "mock";
  std::string presentation = "overlay";
  bool force = false;
};

int cmd_build(const BuildOpts& o, const Global& g, std::ostream& out) {
  ManifestLoadOptions lo;
  lo.allow_uncaptioned = true;
  const DatasetManifest in = load_manifest(o.manifest, lo);
  CaptionOptions co;
  co.force = o.force;
  if (o.presentation == "overlay") {
    co.presentation = BoxPresentation::kOverlay;
  } else if (o.presentation == "coordinates") {
    co.presentation = BoxPresentation::kCoordinates;
  } else {
    throw ConfigError("presentation must be overlay or coordinates");
  }
  auto client = make_captioning_client(o.captioner);
  const CaptionRun run = caption_triplets(in, *client, co);

  // Rebase relative paths onto the output directory.
  fs::create_directories(g.out_dir);
  const fs::path base = fs::absolute(g.out_dir);
  std::vector<Triplet> records = run.manifest.records();
  for (auto& t : records) {
    t.image = fs::relative(fs::absolute(run.manifest.resolve(t.image)), base);
    t.mask = fs::relative(fs::absolute(run.manifest.resolve(t.mask)), base);
  }
  write_manifest(DatasetManifest(std::move(records), base, run.manifest.schema_version()),
                 g.out_dir / "manifest.jsonl");
  std::ofstream fail(g.out_dir / "caption_failures.jsonl");
  for (const auto& f : run.failures) fail << json{{"id", f.id}, {"error", f.message}}.dump() << '\n';
  out << "captioned " << run.client_calls - run.failures.size() << ", skipped " << run.skipped << ", failed "
      << run.failures.size() << '\n';
  return 0;
}

// ---- retrieve -------------------------------------------------------------

struct RetrieveOpts {
  fs::path manifest;
  std::string query;
  std::string category_hint;
  std::string mllm = "mock";
};

json retrieval_json(const RetrievalResult& r) {
  json matches = json::array();
  for (const auto& m : r.matches) {
    matches.push_back({{"category", m.category}, {"defect_type", m.defect_type}, {"exact", m.exact}});
  }
  return {{"answer", r.answer},           {"categories", r.categories}, {"matches", matches},
          {"triplet_ids", r.triplet_ids}, {"diagnostic", r.diagnostic}};
}

int cmd_retrieve(const RetrieveOpts& o, const Global& g, std::ostream& out) {
  const DatasetManifest m = load_manifest(o.manifest);
  auto client = make_mllm_client(o.mllm);
  RetrievalQuery q{o.query, std::nullopt};
  if (!o.category_hint.empty()) q.category_hint = o.category_hint;
  const RetrievalResult r = retrieve(q, m, *client);
  out << "answer: " << r.answer << '\n';
  for (const auto& mt : r.matches) {
    out << "match: " << mt.category << " -> " << mt.defect_type << (mt.exact ? " (exact)" : " (adjudicated)")
        << '\n';
  }
  out << "triplets: " << r.triplet_ids.size() << '\n';
  for (const auto& id : r.triplet_ids) out << "  " << id << '\n';
  if (!r.diagnostic.empty()) out << "note: " << r.diagnostic << '\n';
  write_json(g.out_dir / "retrieval.json", retrieval_json(r));
  return 0;
}

// ---- pretrain / train -----------------------------------------------------

struct PretrainOpts {
  fs::path normals;
  fs::path model_config;
  std::size_t steps = PretrainConfig{}.steps;
  std::size_t batch = PretrainConfig{}.batch_size;
  double lr = PretrainConfig{}.learning_rate;
};

int cmd_pretrain(const PretrainOpts& o, const Global& g, std::ostream& out) {
  std::vector<Image> normals;
  for (const auto& p : png_files(o.normals)) normals.push_back(read_image(p));
  Model model = build_model(model_config(o.model_config, g), load_registry(g));
  PretrainConfig pc;
  pc.steps = o.steps;
  pc.batch_size = o.batch;
  pc.learning_rate = o.lr;
  pc.seed = g.seed;
  spdlog::info("pretraining backbone on {} images for {} steps", normals.size(), pc.steps);
  const auto losses = pretrain_backbone(model, normals, pc);
  fs::create_directories(g.out_dir);
  save_model(model, g.out_dir / "backbone.bin");
  std::ofstream lf(g.out_dir / "pretrain_loss.jsonl");
  for (std::size_t i = 0; i < losses.size(); ++i) lf << json{{"step", i + 1}, {"loss", losses[i]}}.dump() << '\n';
  out << "final loss " << (losses.empty() ? 0.0 : losses.back()) << ", wrote "
      << (g.out_dir / "backbone.bin").string() << '\n';
  return 0;
}

struct TrainOpts {
  fs::path manifest;
  fs::path init;
  fs::path model_config;
  fs::path train_config;
  std::size_t steps = 0;
  std::size_t batch = 0;
  double lr = 0.0;
  std::size_t dilation = 0;
  std::size_t checkpoint_every = 0;
  CLI::Option* steps_opt = nullptr;
  CLI::Option* batch_opt = nullptr;
  CLI::Option* lr_opt = nullptr;
  CLI::Option* dilation_opt = nullptr;
  CLI::Option* ckpt_opt = nullptr;
  const Global* global = nullptr;
};

// Flag > train-config file > default. The merged values become the
// options' defaults so the snapshot records them.
TrainConfig merge_train_config(const TrainOpts& o, const Global& g) {
  TrainConfig tc = o.train_config.empty() ? TrainConfig{} : load_train_config(o.train_config);
  if (o.steps_opt->count()) tc.steps = o.steps;
  if (o.batch_opt->count()) tc.batch_size = o.batch;
  if (o.lr_opt->count()) tc.learning_rate = o.lr;
  if (o.dilation_opt->count()) tc.dilation_radius = o.dilation;
  if (o.ckpt_opt->count()) tc.checkpoint_every = o.checkpoint_every;
  tc.seed = g.seed;
  tc.out_dir = g.out_dir;
  std::ostringstream lr;
  lr << std::setprecision(17) << tc.learning_rate;
  o.steps_opt->default_str(std::to_string(tc.steps));
  o.batch_opt->default_str(std::to_string(tc.batch_size));
  o.lr_opt->default_str(lr.str());
  o.dilation_opt->default_str(std::to_string(tc.dilation_radius));
  o.ckpt_opt->default_str(std::to_string(tc.checkpoint_every));
  return tc;
}

int cmd_train(const TrainOpts& o, const TrainConfig& tc, std::ostream& out) {
  const Global& g = *o.global;
  const DatasetManifest m = load_manifest(o.manifest);
  const ModelRegistry reg = load_registry(g);
  Model model = o.init.empty() ? build_model(model_config(o.model_config, g), reg) : load_model(o.init, reg);
  TrainHooks hooks;
  hooks.on_step = [&](const LossRecord& r) {
    if (r.step % 50 == 0 || r.step == 1) spdlog::info("step {} loss {:.5f}", r.step, r.loss);
  };
  const TrainState st = train(m, model, tc, hooks);
  out << "trained " << st.step << " steps, final loss " << (st.history.empty() ? 0.0 : st.history.back().loss)
      << ", wrote " << (g.out_dir / "checkpoint.bin").string() << '\n';
  return 0;
}

// ---- generate -------------------------------------------------------------

struct GenerateOpts {
  fs::path model;
  fs::path target;
  fs::path manifest;
  std::string query;
  std::string category_hint;
  std::string triplet_id;
  std::string caption;
  fs::path ref_image;
  fs::path ref_mask;
  std::string mllm = "mock";
  std::size_t count = 1;
  fs::path mask_spec;
  std::size_t steps = GenerationConfig{}.ddim_steps;
  double threshold = RefineConfig{}.threshold;
  std::string selection = "random";
  std::string detector = "absdiff";
};

int cmd_generate(const GenerateOpts& o, const Global& g, std::ostream& out) {
  const Model model = load_model(o.model, load_registry(g));
  BatchRequest req;
  for (const auto& p : png_files(o.target)) {
    req.targets.push_back(read_image(p));
    req.target_names.push_back(p.stem().string());
  }
  req.count = o.count;
  req.seed = g.seed;
  if (!o.mask_spec.empty()) req.mask_spec = parse_mask_spec(read_text(o.mask_spec));
  if (o.selection == "random") {
    req.selection = TripletSelection::kRandom;
  } else if (o.selection == "round-robin") {
    req.selection = TripletSelection::kRoundRobin;
  } else {
    throw ConfigError("selection must be random or round-robin");
  }

  std::optional<DatasetManifest> manifest;
  if (!o.manifest.empty()) manifest = load_manifest(o.manifest);
  if (!o.query.empty() || !o.triplet_id.empty()) {
    if (!manifest) throw ValidationError("--query and --triplet-id need --manifest");
    if (!o.triplet_id.empty()) {
      const Triplet* t = manifest->find(o.triplet_id);
      if (!t) throw ValidationError("no triplet '" + o.triplet_id + "' in the manifest");
      req.candidates.push_back(t);
    } else {
      auto client = make_mllm_client(o.mllm);
      RetrievalQuery q{o.query, std::nullopt};
      if (!o.category_hint.empty()) q.category_hint = o.category_hint;
      const RetrievalResult r = retrieve(q, *manifest, *client);
      if (r.triplet_ids.empty()) throw RetrievalError(r.diagnostic);
      for (const auto& id : r.triplet_ids) req.candidates.push_back(manifest->find(id));
      spdlog::info("retrieved {} triplets for '{}'", r.triplet_ids.size(), o.query);
    }
  } else {
    PromptInput p;
    json prov = json::object();
    if (!o.caption.empty()) {
      p.caption = o.caption;
      prov["caption"] = o.caption;
    }
    if (!o.ref_image.empty()) {
      p.image = read_image(o.ref_image);
      prov["ref_image"] = o.ref_image.string();
    }
    if (!o.ref_mask.empty()) {
      p.mask = read_mask(o.ref_mask);
      prov["ref_mask"] = o.ref_mask.string();
    }
    req.prompt = p;
    req.prompt_provenance = prov.dump();
  }

  GenerationConfig gc;
  gc.ddim_steps = o.steps;
  gc.refine.threshold = o.threshold;
  const auto detector = DetectorRegistry().create(o.detector);
  const auto results = generate_batch(req, manifest ? &*manifest : nullptr, model, *detector, gc);

  fs::create_directories(g.out_dir / "images");
  fs::create_directories(g.out_dir / "masks");
  std::ofstream prov(g.out_dir / "provenance.jsonl");
  std::size_t k = 0;
  for (std::size_t ti = 0; ti < req.targets.size(); ++ti) {
    for (std::size_t c = 0; c < req.count; ++c, ++k) {
      const GenerationResult& r = results[k];
      char stem[64];
      std::snprintf(stem, sizeof(stem), "%03zu", c);
      const std::string base = req.target_names[ti] + "-" + stem;
      const fs::path img = fs::path("images") / (base + ".png");
      const fs::path coarse = fs::path("masks") / (base + "-coarse.png");
      const fs::path refined = fs::path("masks") / (base + "-refined.png");
      write_image(g.out_dir / img, r.generated);
      write_mask(g.out_dir / coarse, r.coarse_mask);
      write_mask(g.out_dir / refined, r.refined_mask);
      prov << json{{"image", img.string()},
                   {"coarse_mask", coarse.string()},
                   {"refined_mask", refined.string()},
                   {"seed", r.seed},
                   {"prompt", json::parse(r.provenance)}}
                  .dump()
           << '\n';
    }
  }
  out << "generated " << results.size() << " images under " << g.out_dir.string() << '\n';
  return 0;
}

// ---- refine-mask ----------------------------------------------------------

struct RefineOpts {
  fs::path input;
  fs::path generated;
  fs::path coarse;
  double threshold = RefineConfig{}.threshold;
  std::size_t min_area = RefineConfig{}.min_component_area;
  std::size_t closing = RefineConfig{}.closing_radius;
  std::string detector = "absdiff";
};

int cmd_refine(const RefineOpts& o, const Global& g, std::ostream& out) {
  RefineConfig rc{o.threshold, o.min_area, o.closing};
  const auto det = DetectorRegistry().create(o.detector);
  const Mask m = refine(read_image(o.input), read_image(o.generated), read_mask(o.coarse), *det, rc);
  write_mask(g.out_dir / "refined-mask.png", m);
  out << "refined mask: " << m.count() << " foreground pixels\n";
  return 0;
}

// ---- evaluate / export-features -------------------------------------------

struct EvaluateOpts {
  fs::path results;
  fs::path scores;
  double fpr_limit = 0.3;
  std::size_t classes = 8;
};

std::vector<ScoredLabel> read_scores(const fs::path& path, std::vector<PixelMap>& maps) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  const fs::path dir = path.parent_path();
  std::vector<ScoredLabel> items;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      items.push_back({j.at("score").get<double>(), j.at("label").get<int>()});
      if (j.contains("map") && j.contains("mask")) {
        const Image mapimg = read_image(dir / j["map"].get<std::string>());
        Tensor map({mapimg.height(), mapimg.width()});
        for (std::size_t y = 0; y < mapimg.height(); ++y)
          for (std::size_t x = 0; x < mapimg.width(); ++x) map.at(y, x) = mapimg.at(0, y, x);
        maps.push_back({map, read_mask(dir / j["mask"].get<std::string>())});
      }
    } catch (const json::exception& e) {
      throw ParseError(e.what(), n);
    }
  }
  return items;
}

int cmd_evaluate(const EvaluateOpts& o, const Global& g, std::ostream& out) {
  json report = json::object();
  if (!o.results.empty()) {
    std::ifstream in(o.results / "provenance.jsonl");
    if (!in) throw IoError("no provenance.jsonl under '" + o.results.string() + "'");
    std::vector<GeneratedSample> samples;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      const json& p = j.at("prompt");
      samples.push_back({p.value("category", std::string("custom")), p.value("defect_type", std::string("custom")),
                         read_image(o.results / j.at("image").get<std::string>())});
    }
    const auto rows = evaluate_generation(samples, ToyClassifier(o.classes, g.seed), ToyPerceptualDistance());
    out << std::left << std::setw(16) << "category" << std::setw(10) << "IS" << std::setw(10) << "IL" << "n\n";
    json jr = json::array();
    for (const auto& r : rows) {
      out << std::setw(16) << r.category << std::setw(10) << std::setprecision(4) << r.is << std::setw(10)
          << (r.il_defined ? std::to_string(r.il).substr(0, 6) : "-") << r.images << '\n';
      jr.push_back({{"category", r.category},
                    {"is", r.is},
                    {"il", r.il_defined ? json(r.il) : json(nullptr)},
                    {"images", r.images}});
    }
    report["generation"] = jr;
  }
  if (!o.scores.empty()) {
    std::vector<PixelMap> maps;
    const auto items = read_scores(o.scores, maps);
    const DetectionReport d = evaluate_detection(items, maps, o.fpr_limit);
    out << "I-ROC " << d.image_auroc << "  I-F1 " << d.image_f1;
    if (!maps.empty()) out << "  PRO " << d.pro << "  P-F1 " << d.pixel_f1;
    out << '\n';
    report["detection"] = {{"i_roc", d.image_auroc}, {"i_f1", d.image_f1}};
    if (!maps.empty()) {
      report["detection"]["pro"] = d.pro;
      report["detection"]["p_f1"] = d.pixel_f1;
    }
  }
  if (report.empty()) throw ValidationError("evaluate needs --results and/or --scores");
  write_json(g.out_dir / "report.json", report);
  return 0;
}

struct FeatureOpts {
  fs::path normals;
  fs::path manifest;
  fs::path results;
};

int cmd_features(const FeatureOpts& o, const Global& g, std::ostream& out) {
  std::vector<LabeledImage> imgs;
  if (!o.normals.empty()) {
    for (const auto& p : png_files(o.normals)) imgs.push_back({p.stem().string(), "normal", read_image(p)});
  }
  if (!o.manifest.empty()) {
    const DatasetManifest m = load_manifest(o.manifest);
    for (const auto& t : m.records()) imgs.push_back({t.id, "real-anomaly", m.load_image(t)});
  }
  if (!o.results.empty()) {
    for (const auto& p : png_files(o.results / "images")) imgs.push_back({p.stem().string(), "synthetic", read_image(p)});
  }
  if (imgs.empty()) throw ValidationError("export-features needs --normals, --manifest or --results");
  const ToyFeatureExtractor fx;
  write_feature_table(export_features(imgs, fx), fx.feature_names(), g.out_dir / "features.csv");
  out << "wrote " << imgs.size() << " feature rows to " << (g.out_dir / "features.csv").string() << '\n';
  return 0;
}

// Global options and the active command's options only.
std::string snapshot(const CLI::App& app, const CLI::App& cmd) {
  std::istringstream all(app.config_to_str(true, false));
  std::ostringstream keep;
  keep << "# anomagic --config resolved-config.toml " << cmd.get_name() << '\n';
  const std::string prefix = cmd.get_name() + ".";
  for (std::string line; std::getline(all, line);) {
    const std::string key = line.substr(0, line.find('='));
    if (key.find('.') == std::string::npos || key.rfind(prefix, 0) == 0) keep << line << '\n';
  }
  return keep.str();
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Anomagic: prompt-driven anomaly generation", "anomagic"};
  app.set_config("--config", "", "TOML file of option values (flags take precedence)");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  Global g;
  app.add_option("--seed", g.seed, "Seed for every random draw");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
  app.add_option("--out-dir", g.out_dir, "Directory for all artifacts");
  app.add_option("--registry", g.registry, "Model registry JSON file");

  StatsOpts so;
  auto* stats = app.add_subcommand("stats", "Domain and defect-type statistics of a manifest");
  stats->add_option("--manifest", so.manifest)->required();

  BuildOpts bo;
  auto* build = app.add_subcommand("build-dataset", "Caption a manifest's triplets");
  build->add_option("--manifest", bo.manifest)->required();
  build->add_option("--captioner", bo.captioner, "mock or an endpoint URL");
  build->add_option("--presentation", bo.presentation, "overlay or coordinates");
  build->add_flag("--force", bo.force, "Re-caption records that already have captions");

  RetrieveOpts ro;
  auto* retr = app.add_subcommand("retrieve", "Map a question to matching triplets");
  retr->add_option("--manifest", ro.manifest)->required();
  retr->add_option("--query", ro.query)->required();
  retr->add_option("--category-hint", ro.category_hint);
  retr->add_option("--mllm", ro.mllm, "mock, mock:<table.json> or an endpoint URL");

  PretrainOpts po;
  auto* pre = app.add_subcommand("pretrain", "Fit the backbone on normal images");
  pre->add_option("--normals", po.normals, "PNG file or directory")->required();
  pre->add_option("--model-config", po.model_config);
  pre->add_option("--steps", po.steps);
  pre->add_option("--batch", po.batch);
  pre->add_option("--lr", po.lr);

  TrainOpts to;
  to.global = &g;
  auto* tr = app.add_subcommand("train", "Fine-tune adapters and the prompt encoder");
  tr->add_option("--manifest", to.manifest)->required();
  tr->add_option("--init", to.init, "Checkpoint to start from, e.g. a pretrained backbone");
  tr->add_option("--model-config", to.model_config);
  tr->add_option("--train-config", to.train_config, "key = value file");
  to.steps_opt = tr->add_option("--steps", to.steps);
  to.batch_opt = tr->add_option("--batch", to.batch);
  to.lr_opt = tr->add_option("--lr", to.lr);
  to.dilation_opt = tr->add_option("--dilation", to.dilation);
  to.ckpt_opt = tr->add_option("--checkpoint-every", to.checkpoint_every);

  GenerateOpts go;
  auto* gen = app.add_subcommand("generate", "Inpaint anomalies into normal images");
  gen->add_option("--model", go.model)->required();
  gen->add_option("--target", go.target, "PNG file or directory")->required();
  gen->add_option("--manifest", go.manifest);
  gen->add_option("--query", go.query);
  gen->add_option("--category-hint", go.category_hint);
  gen->add_option("--triplet-id", go.triplet_id);
  gen->add_option("--caption", go.caption);
  gen->add_option("--ref-image", go.ref_image);
  gen->add_option("--ref-mask", go.ref_mask);
  gen->add_option("--mllm", go.mllm);
  gen->add_option("--count", go.count)->check(CLI::PositiveNumber);
  gen->add_option("--mask-spec", go.mask_spec, "JSON coarse-mask spec");
  gen->add_option("--steps", go.steps)->check(CLI::PositiveNumber);
  gen->add_option("--threshold", go.threshold);
  gen->add_option("--selection", go.selection, "random or round-robin");
  gen->add_option("--detector", go.detector);

  RefineOpts fo;
  auto* ref = app.add_subcommand("refine-mask", "Refined mask from an image pair");
  ref->add_option("--input", fo.input)->required();
  ref->add_option("--generated", fo.generated)->required();
  ref->add_option("--coarse-mask", fo.coarse)->required();
  ref->add_option("--threshold", fo.threshold);
  ref->add_option("--min-area", fo.min_area);
  ref->add_option("--closing", fo.closing);
  ref->add_option("--detector", fo.detector);

  EvaluateOpts eo;
  auto* ev = app.add_subcommand("evaluate", "Generation and detection metrics");
  ev->add_option("--results", eo.results, "Output directory of generate");
  ev->add_option("--scores", eo.scores, "JSONL of {score, label[, map, mask]}");
  ev->add_option("--fpr-limit", eo.fpr_limit);
  ev->add_option("--classes", eo.classes, "Classes of the toy classifier");

  FeatureOpts xo;
  auto* fx = app.add_subcommand("export-features", "Feature table for distribution plots");
  fx->add_option("--normals", xo.normals);
  fx->add_option("--manifest", xo.manifest);
  fx->add_option("--results", xo.results);

  if (args.empty()) {
    err << app.help();
    return 2;
  }
  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "anomagic: " << one_line(e.what()) << '\n';
    return 2;
  }

  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  spdlog::logger log("anomagic", sink);
  log.set_pattern("[%l] %v");
  log.set_level(spdlog::level::from_str(g.log_level));
  auto previous = spdlog::default_logger();
  spdlog::set_default_logger(std::make_shared<spdlog::logger>(log));

  const CLI::App* cmd = app.get_subcommands().front();
  int code = 1;
  try {
    TrainConfig tc;
    if (cmd == tr) tc = merge_train_config(to, g);
    fs::create_directories(g.out_dir);
    std::ofstream snap(g.out_dir / "resolved-config.toml");
    snap << snapshot(app, *cmd);
    if (!snap) throw IoError("cannot write the resolved-config snapshot");
    if (cmd == stats) code = cmd_stats(so, g, out);
    if (cmd == build) code = cmd_build(bo, g, out);
    if (cmd == retr) code = cmd_retrieve(ro, g, out);
    if (cmd == pre) code = cmd_pretrain(po, g, out);
    if (cmd == tr) code = cmd_train(to, tc, out);
    if (cmd == gen) code = cmd_generate(go, g, out);
    if (cmd == ref) code = cmd_refine(fo, g, out);
    if (cmd == ev) code = cmd_evaluate(eo, g, out);
    if (cmd == fx) code = cmd_features(xo, g, out);
  } catch (const std::exception& e) {
    err << "anomagic: " << cmd->get_name() << ": " << one_line(e.what()) << '\n';
    code = 1;
  }
  spdlog::set_default_logger(previous);
  return code;
}

}  // namespace anomagic::cli
