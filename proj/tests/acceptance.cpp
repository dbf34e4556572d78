// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "anomagic/clients.hpp"
#include "anomagic/diffusion.hpp"
#include "anomagic/evaluation.hpp"
#include "anomagic/generation.hpp"
#include "anomagic/mask_refinement.hpp"
#include "anomagic/model.hpp"
#include "anomagic/prompt_encoder.hpp"
#include "anomagic/trainer.hpp"
#include "anomagic/triplet_store.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace anomagic {
namespace {

namespace fs = std::filesystem;
using ad::Var;

// Collects failed sub-checks of one criterion.
class Verdict {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    if (!ok) ++failed_;
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool ok() const { return failed_ == 0; }
  std::string summary() const {
    std::ostringstream s;
    for (std::size_t i = 0; i < notes_.size(); ++i) s << (i ? "; " : "") << notes_[i];
    if (failed_) {
      s << (notes_.empty() ? "" : "; ") << failed_ << " failed:";
      for (const auto& f : failures_) s << ' ' << f << ';';
    }
    return s.str();
  }

 private:
  std::size_t failed_ = 0;
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

DatasetManifest toy_manifest() { return load_manifest(testing::toy_dir() / "manifest.jsonl"); }

// ---- 1 --------------------------------------------------------------------

Verdict masked_attention_suite() {
  Verdict v;
  Rng rng(101);
  double worst_copy = 0.0, worst_leak = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t nq = 1 + rng() % 8, nk = 2 + rng() % 15, d = 1 + rng() % 16, dv = 1 + rng() % 8;
    const Tensor q = randn({nq, d}, rng, 2.0), k = randn({nk, d}, rng, 2.0), val = randn({nk, dv}, rng);

    const Tensor masked = masked_attention(Var::constant(q), Var::constant(k), Var::constant(val),
                                           std::vector<std::uint8_t>(nk, 1), 1e4).value();
    const Tensor dense = nn::attention(Var::constant(q), Var::constant(k), Var::constant(val), 1).value();
    v.expect(bitwise_equal(masked, dense), "all-ones differs from dense in trial " + std::to_string(trial));

    std::vector<std::uint8_t> single(nk, 0);
    const std::size_t j = rng() % nk;
    single[j] = 1;
    const Tensor copy = masked_attention(Var::constant(q), Var::constant(k), Var::constant(val), single, 1e4).value();
    for (std::size_t i = 0; i < nq; ++i)
      for (std::size_t e = 0; e < dv; ++e) {
        const double want = val.at(j, e);
        worst_copy = std::max(worst_copy, std::abs(copy.at(i, e) - want) / std::abs(want));
      }

    std::vector<std::uint8_t> m(nk);
    for (auto& b : m) b = rng() % 2;
    m[rng() % nk] = 1;
    const Tensor w = masked_attention_weights(q, k, m, 1e4);
    for (std::size_t i = 0; i < nq; ++i) {
      double leak = 0.0;
      for (std::size_t c = 0; c < nk; ++c)
        if (!m[c]) leak += w.at(i, c);
      worst_leak = std::max(worst_leak, leak);
    }
  }
  v.expect(worst_copy <= 1e-6, "single-key relative error " + fmt(worst_copy));
  v.expect(worst_leak < 1e-6, "leaked mass " + fmt(worst_leak));
  v.note("100 instances, single-key rel err " + fmt(worst_copy) + ", max leak " + fmt(worst_leak));
  return v;
}

// ---- 2 --------------------------------------------------------------------

Verdict hierarchical_text_suite() {
  Verdict v;
  const ToyTextEncoder enc(16, 16, 5);
  const std::vector<std::string> vocab{"crack",  "dent,", "hole.",  "scratch;", "rim",  "edge!",
                                       "spot?",  "the",   "faint",  "glossy",   "near", "a",
                                       "stain.", "dark",  "region,", "sharp",   "burr;", "tile"};
  Rng rng(202);
  double worst_mean = 0.0;
  std::size_t singles = 0, multis = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t words = rng() % 60;
    std::string text;
    for (std::size_t w = 0; w < words; ++w) text += (w ? " " : "") + vocab[rng() % vocab.size()];
    const auto segs = segment_caption(text, enc);
    for (const auto& s : segs)
      v.expect(enc.tokenize(s).size() <= enc.token_limit(), "segment over the limit: '" + s + "'");
    const TextPrompt p = encode_text_hierarchical(text, enc);
    v.expect(p.n_segments == segs.size(), "segment count mismatch");
    if (segs.size() == 1) {
      ++singles;
      v.expect(bitwise_equal(p.vector, enc.encode_segment(text)), "single segment not exact");
    } else {
      ++multis;
      std::vector<long double> acc(enc.embedding_dim(), 0.0L);
      for (const auto& s : segs) {
        const Tensor e = enc.encode_segment(s);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += e[i];
      }
      for (std::size_t i = 0; i < acc.size(); ++i) {
        const double want = static_cast<double>(acc[i] / static_cast<long double>(segs.size()));
        worst_mean = std::max(worst_mean, std::abs(p.vector[i] - want));
      }
    }
  }
  v.expect(worst_mean <= 1e-7, "segment mean error " + fmt(worst_mean));
  v.expect(singles > 0 && multis > 0, "random strings did not cover both cases");
  v.note("1000 strings (" + std::to_string(singles) + " single, " + std::to_string(multis) +
         " multi), mean err " + fmt(worst_mean));
  return v;
}

// ---- 3 --------------------------------------------------------------------

Verdict diffusion_algebra_suite() {
  Verdict v;
  Rng rng(303);
  const NoiseSchedule s = NoiseSchedule::linear(50);
  double worst_inv = 0.0, worst_ddim = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor z0 = randn({12, 4, 4}, rng), eps = randn(z0.shape(), rng);
    const std::size_t t = 1 + rng() % s.T();
    const Tensor z_t = forward_noise(z0, t, eps, s);
    const Tensor back = predict_z0(z_t, t, eps, s);
    for (std::size_t i = 0; i < z0.size(); ++i) worst_inv = std::max(worst_inv, std::abs(back[i] - z0[i]));

    // Full DDIM trajectory driven by the oracle noise of z0.
    const std::size_t steps = 1 + rng() % s.T();
    const EpsFn oracle = [&](const Tensor& z, std::size_t tt) {
      const double a = s.alpha(tt);
      Tensor e(z.shape());
      for (std::size_t i = 0; i < z.size(); ++i) e[i] = (z[i] - std::sqrt(a) * z0[i]) / std::sqrt(1.0 - a);
      return e;
    };
    const Tensor z_T = forward_noise(z0, s.T(), eps, s);
    const Tensor out = sample(oracle, z_T, steps, s);
    for (std::size_t i = 0; i < z0.size(); ++i) worst_ddim = std::max(worst_ddim, std::abs(out[i] - z0[i]));
  }
  v.expect(worst_inv <= 1e-6, "inversion error " + fmt(worst_inv));
  v.expect(worst_ddim <= 1e-6, "DDIM trajectory error " + fmt(worst_ddim));

  const PredictorConfig cfg{};
  NoisePredictor bare(cfg, 17), adapted(cfg, 17);
  adapted.apply_lora(adapted.cross_attention_projections(), 4, 1.0, 18);
  bool identical = true;
  for (int pass = 0; pass < 50; ++pass) {
    const Tensor z = randn({12, 8, 8}, rng), extra = randn({1, 8, 8}, rng);
    const Var cond = Var::constant(randn({1 + rng() % 6, 16}, rng));
    const std::size_t t = 1 + rng() % 50;
    identical = identical && bitwise_equal(bare.predict(z, extra, t, cond), adapted.predict(z, extra, t, cond));
  }
  v.expect(identical, "zero adapters changed an output");

  for (const auto& a : adapted.adapters()) {
    Tensor& b = adapted.params().get(a.b_name()).node()->value;
    b = randn(b.shape(), rng, 0.1);
  }
  NoisePredictor merged = adapted;
  merged.merge_lora();
  double worst_merge = 0.0;
  for (int pass = 0; pass < 10; ++pass) {
    const Tensor z = randn({12, 8, 8}, rng), extra = randn({1, 8, 8}, rng);
    const Var cond = Var::constant(randn({5, 16}, rng));
    const Tensor x = adapted.predict(z, extra, 9, cond), y = merged.predict(z, extra, 9, cond);
    for (std::size_t i = 0; i < x.size(); ++i) worst_merge = std::max(worst_merge, std::abs(x[i] - y[i]));
  }
  v.expect(worst_merge <= 1e-6, "merge error " + fmt(worst_merge));
  v.note("inversion err " + fmt(worst_inv) + ", DDIM err " + fmt(worst_ddim) +
         ", 50 zero-adapter passes " + (identical ? "bit-identical" : "differ") + ", merge err " + fmt(worst_merge));
  return v;
}

// ---- 4 --------------------------------------------------------------------

// Tiny model whose trainable set stays under 1k parameters.
Model tiny_model() {
  ModelRegistry reg;
  EncoderSpec spec;
  spec.name = "tiny";
  spec.feature_dim = 4;
  spec.text_dim = 4;
  reg.add(spec);
  ModelConfig mc;
  mc.encoder = "tiny";
  mc.cpe.d_feat = mc.cpe.d_attn = mc.cpe.d_text = mc.cpe.d_cond = 4;
  mc.predictor = PredictorConfig{12, 1, 4, 8, 4, 2};
  mc.lora_rank = 1;
  mc.seed = 4;
  return build_model(mc, reg);
}

double gradient_check(Verdict& v, std::size_t& n_params) {
  Model m = tiny_model();
  Rng init(41);
  for (const auto& a : m.predictor.adapters()) {
    Tensor& b = m.predictor.params().get(a.b_name()).node()->value;
    b = randn(b.shape(), init, 0.1);
  }
  const DatasetManifest man = toy_manifest();
  const std::vector<const Triplet*> batch{&man.records()[0], &man.records()[7]};
  const TrainConfig cfg;
  auto loss = [&] {
    Rng rng(9);
    return training_loss(batch, man, m, cfg, rng, 1);
  };
  std::vector<std::pair<nn::ParameterStore*, std::string>> params;
  for (auto* store : {&m.predictor.params(), &m.cpe.params()})
    for (const auto& n : store->trainable_names()) params.emplace_back(store, n);
  n_params = 0;
  for (const auto& [store, name] : params) n_params += store->get(name).value().size();
  v.expect(n_params <= 1000, "trainable parameters " + std::to_string(n_params));

  m.predictor.params().zero_grad();
  m.cpe.params().zero_grad();
  ad::backward(loss());
  double worst = 0.0;
  for (const auto& [store, name] : params) {
    const Tensor g = store->get(name).grad();
    Tensor& w = store->get(name).node()->value;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double keep = w[i];
      w[i] = keep + 1e-6;
      const double up = loss().value()[0];
      w[i] = keep - 1e-6;
      const double down = loss().value()[0];
      w[i] = keep;
      const double num = (up - down) / 2e-6;
      worst = std::max(worst, std::abs(num - g[i]) / std::max({std::abs(num), std::abs(g[i]), 1e-4}));
    }
  }
  v.expect(worst <= 1e-4, "gradient relative error " + fmt(worst));
  return worst;
}

bool zero_mask_is_inert(Model& model) {
  Rng rng(44);
  const DatasetManifest man = toy_manifest();
  const Triplet& t = man.records()[3];
  const CrossmodalCondition c =
      model.cpe.encode(PromptInput{man.load_image(t), man.load_mask(t), t.caption}, *model.encoders.image,
                       *model.encoders.text);
  const Tensor z = randn({12, 16, 16}, rng), eps = randn(z.shape(), rng);
  Tensor x({13, 16, 16});
  std::copy(z.storage().begin(), z.storage().end(), x.storage().begin());
  const Var eps_hat = model.predictor.forward(Var::constant(x), 20, c.p_c);
  for (auto norm : {LossNormalization::kMaskedMean, LossNormalization::kGlobalMean}) {
    const Var l = masked_loss(eps, eps_hat, Tensor({1, 16, 16}, 0.0), norm);
    if (l.value()[0] != 0.0) return false;
  }
  model.predictor.params().zero_grad();
  model.cpe.params().zero_grad();
  ad::backward(masked_loss(eps, eps_hat, Tensor({1, 16, 16}, 0.0), LossNormalization::kMaskedMean));
  for (const auto* store : {&model.predictor.params(), &model.cpe.params()})
    for (const auto& n : store->trainable_names()) {
      const Tensor g = store->get(n).grad();
      if (g.max_abs() != 0.0) return false;
    }
  return true;
}

Verdict training_suite() {
  Verdict v;
  std::size_t n_params = 0;
  const double grad_err = gradient_check(v, n_params);

  const DatasetManifest man = toy_manifest();
  {
    Model m = build_model(ModelConfig{});
    const auto base = m.predictor.base_checksum();
    const auto img = m.encoders.image->checksum(), txt = m.encoders.text->checksum();
    TrainConfig tc;
    tc.steps = 100;
    tc.learning_rate = 1e-2;
    train(man, m, tc);
    v.expect(m.predictor.base_checksum() == base, "predictor base changed");
    v.expect(m.encoders.image->checksum() == img && m.encoders.text->checksum() == txt, "encoders changed");
    v.expect(zero_mask_is_inert(m), "zero-mask loss or gradient nonzero");
  }
  {
    TrainConfig tc;
    tc.steps = 20;
    tc.batch_size = 4;
    tc.seed = 12;
    Model a = build_model(ModelConfig{}), b = build_model(ModelConfig{});
    const TrainState sa = train(man, a, tc), sb = train(man, b, tc);
    bool same = sa.history.size() == sb.history.size();
    for (std::size_t i = 0; same && i < sa.history.size(); ++i) same = sa.history[i].loss == sb.history[i].loss;
    v.expect(same, "same seed gave different loss histories");
  }

  std::vector<Image> normals;
  for (const auto& t : man.records()) normals.push_back(read_image(man.resolve("normal/" + t.id + ".png")));
  Model m = build_model(ModelConfig{});
  const auto t0 = std::chrono::steady_clock::now();
  pretrain_backbone(m, normals, PretrainConfig{});
  TrainConfig tc;
  tc.steps = 500;
  tc.learning_rate = 3e-3;
  const TrainState st = train(man, m, tc);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  double lead = 0.0, trail = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    lead += st.history[i].loss;
    trail += st.history[st.history.size() - 50 + i].loss;
  }
  const double ratio = trail / lead;
  v.expect(ratio <= 0.5, "loss ratio " + fmt(ratio));
  v.note(std::to_string(n_params) + "-parameter gradient err " + fmt(grad_err) + ", loss ratio " + fmt(ratio) +
         " after 500 steps (" + fmt(secs) + " s incl. backbone fit)");
  return v;
}

// ---- 5 --------------------------------------------------------------------

Verdict generation_suite() {
  Verdict v;
  Model model = build_model(ModelConfig{});
  Rng init(55);
  for (const auto& a : model.predictor.adapters()) {
    Tensor& b = model.predictor.params().get(a.b_name()).node()->value;
    b = randn(b.shape(), init, 0.05);
  }
  const DatasetManifest man = toy_manifest();
  const AbsDiffDetector det;
  GenerationConfig gc;
  gc.ddim_steps = 10;
  std::size_t runs = 0;
  for (std::size_t k = 0; k < 8; ++k) {
    const Triplet& t = man.records()[(k * 5) % man.size()];
    const PromptInput prompt{man.load_image(t), man.load_mask(t), t.caption};
    const Image target = read_image(man.resolve("normal/" + man.records()[k].id + ".png"));
    CoarseMaskSpec spec;
    spec.shape = static_cast<MaskShape>(k % 3);
    spec.seed = k;
    const GenerationResult a = generate(target, prompt, "{}", spec, model, det, gc, 100 + k);
    const GenerationResult b = generate(target, prompt, "{}", spec, model, det, gc, 100 + k);
    ++runs;
    bool preserved = true;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < target.height(); ++y)
        for (std::size_t x = 0; x < target.width(); ++x)
          if (!a.coarse_mask(y, x)) preserved = preserved && a.generated.at(c, y, x) == target.at(c, y, x);
    v.expect(preserved, "pixel outside the mask changed in run " + std::to_string(k));
    v.expect(encode_png(a.generated) == encode_png(b.generated) && a.refined_mask == b.refined_mask,
             "run " + std::to_string(k) + " not byte-identical");
    v.expect(a.refined_mask.subset_of(a.coarse_mask), "refined mask escapes the coarse mask");

    Mask prev = a.coarse_mask;
    for (int i = 0; i < 10; ++i) {
      RefineConfig rc;
      rc.threshold = 0.05 + 0.1 * i;
      const Mask cur = refine(a.input, a.generated, a.coarse_mask, det, rc);
      v.expect(cur.subset_of(prev), "refinement not monotone at " + fmt(rc.threshold));
      v.expect(cur.subset_of(a.coarse_mask), "sweep mask escapes the coarse mask");
      prev = cur;
    }
  }
  v.note(std::to_string(runs) + " generations, 10-threshold sweep each");
  return v;
}

// ---- 6 --------------------------------------------------------------------

Verdict metric_suite() {
  Verdict v;
  Rng rng(606);
  std::size_t cases = 0;
  while (cases < 1000) {
    const std::size_t n = 2 + rng() % 11;
    std::vector<ScoredLabel> items(n);
    for (auto& it : items) {
      it.score = static_cast<double>(rng() % 6) / 5.0;
      it.label = static_cast<int>(rng() % 2);
    }
    items[0].label = 1;
    items[1].label = 0;
    ++cases;
    v.expect(roc_auc(items) == oracle::roc_auc(items), "roc_auc case " + std::to_string(cases));
    v.expect(max_f1(items) == oracle::max_f1(items), "max_f1 case " + std::to_string(cases));
  }

  v.expect(std::abs(inception_score_from_probs(std::vector<std::vector<double>>(20, std::vector<double>(5, 0.2))) -
                    1.0) <= 1e-12,
           "uniform IS");
  std::vector<std::vector<double>> onehot;
  for (std::size_t i = 0; i < 40; ++i) {
    std::vector<double> p(8, 0.0);
    p[i % 8] = 1.0;
    onehot.push_back(p);
  }
  const double is_k = inception_score_from_probs(onehot);
  v.expect(std::abs(is_k - 8.0) <= 1e-3, "one-hot IS " + fmt(is_k));

  const ToyPerceptualDistance lp;
  std::vector<std::vector<Image>> clusters(4);
  for (std::size_t c = 0; c < clusters.size(); ++c)
    for (std::size_t i = 0; i < 2 + c; ++i) clusters[c].push_back(testing::random_image(16, 16, rng));
  v.expect(intra_cluster_lpips(clusters, lp) == oracle::intra_cluster(clusters, lp), "IL differs from enumeration");

  for (int trial = 0; trial < 200; ++trial) {
    std::vector<PixelMap> maps;
    for (std::size_t k = 0; k < 1 + trial % 3; ++k) {
      PixelMap pm{Tensor({8, 8}), testing::random_mask(8, 8, 0.25, rng)};
      pm.truth.set(rng() % 8, rng() % 8, true);
      pm.truth.set(0, 0, false);
      for (double& s : pm.map.storage()) s = static_cast<double>(rng() % 10) / 9.0;
      maps.push_back(pm);
    }
    const double limit = trial % 2 ? 0.3 : 0.05 + 0.9 * static_cast<double>(rng() % 100) / 100.0;
    v.expect(pro_auc(maps, limit) == oracle::pro_auc(maps, limit), "PRO case " + std::to_string(trial));
  }
  PixelMap perfect{Tensor({8, 8}), testing::box_mask(8, 8, 2, 3, 5, 7)};
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) perfect.map.at(y, x) = perfect.truth(y, x) ? 1.0 : 0.0;
  v.expect(pro_auc({perfect}) == 1.0, "perfect PRO " + fmt(pro_auc({perfect})));
  v.note("1000 roc/F1 cases, one-hot IS " + fmt(is_k) + ", 200 PRO cases");
  return v;
}

// ---- 7 --------------------------------------------------------------------

Verdict dataset_suite() {
  Verdict v;
  const DatasetManifest man = toy_manifest();
  const fs::path dir = testing::scratch_dir("acceptance-manifest");
  write_manifest(man, dir / "manifest.jsonl");
  // Paths are relative, so the copy resolves against the original base.
  for (const auto& e : fs::directory_iterator(testing::toy_dir()))
    if (e.is_directory()) fs::create_directory_symlink(e.path(), dir / e.path().filename());
  v.expect(load_manifest(dir / "manifest.jsonl") == man, "manifest round trip differs");

  Rng rng(707);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t h = 1 + rng() % 40, w = 1 + rng() % 40;
    Mask m = testing::random_mask(h, w, 0.002 * static_cast<double>(rng() % 100), rng);
    m.set(rng() % h, rng() % w, true);
    BoundingBox want{w, h, 0, 0};
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        if (m(y, x)) {
          want.x_min = std::min(want.x_min, x);
          want.y_min = std::min(want.y_min, y);
          want.x_max = std::max(want.x_max, x);
          want.y_max = std::max(want.y_max, y);
        }
    v.expect(mask_to_bbox(m) == want, "bbox trial " + std::to_string(trial));
  }

  v.expect(render_caption_template("a cashew nut", "crack", "near the center", "a thin fissure", "jagged edges") ==
               "The image depicts a cashew nut, with a crack observed near the center. The defect is "
               "characterized by a thin fissure and exhibits jagged edges.",
           "caption template");

  MockMllmClient mllm;
  const std::string answer = mllm.ask("What defects commonly appear in cashews?", nullptr);
  v.expect(answer == "cracks, holes, bulges, scratches", "cashew answer '" + answer + "'");
  v.expect(split_categories(answer) == std::vector<std::string>{"cracks", "holes", "bulges", "scratches"},
           "cashew categories");
  v.note("round trip, 1000 bbox masks, template, cashew answer '" + answer + "'");
  return v;
}

}  // namespace
}  // namespace anomagic

int main() {
  using namespace anomagic;
  const std::vector<std::pair<const char*, std::function<Verdict()>>> suites{
      {"masked attention", masked_attention_suite}, {"hierarchical text", hierarchical_text_suite},
      {"diffusion algebra", diffusion_algebra_suite}, {"training", training_suite},
      {"generation", generation_suite},             {"metric oracles", metric_suite},
      {"pipeline and dataset", dataset_suite}};
  int failed = 0;
  for (std::size_t i = 0; i < suites.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = suites[i].second();
    } catch (const std::exception& e) {
      v.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] %zu %s (%.1f s): %s\n", v.ok() ? "PASS" : "FAIL", i + 1, suites[i].first, secs,
                v.summary().c_str());
    std::fflush(stdout);
    failed += !v.ok();
  }
  return failed ? 1 : 0;
}
