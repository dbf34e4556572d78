// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "anomagic/evaluation.hpp"
#include "anomagic/model.hpp"
#include "anomagic/prompt_encoder.hpp"

namespace anomagic {
namespace {

void BM_MaskedAttention(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const ad::Var q = ad::Var::constant(randn({n, 16}, rng));
  const ad::Var k = ad::Var::constant(randn({n, 16}, rng));
  const ad::Var v = ad::Var::constant(randn({n, 16}, rng));
  std::vector<std::uint8_t> m(n);
  for (auto& b : m) b = rng() % 2;
  for (auto _ : state) benchmark::DoNotOptimize(masked_attention(q, k, v, m, 1e4));
}
BENCHMARK(BM_MaskedAttention)->Arg(16)->Arg(64)->Arg(256);

void BM_PredictorForward(benchmark::State& state) {
  const Model model = build_model(ModelConfig{});
  const auto side = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const Tensor z = randn({12, side, side}, rng);
  const Tensor extra({1, side, side}, 1.0);
  const ad::Var cond = ad::Var::constant(randn({17, 16}, rng));
  for (auto _ : state) benchmark::DoNotOptimize(model.predictor.predict(z, extra, 25, cond));
}
BENCHMARK(BM_PredictorForward)->Arg(16)->Arg(32);

void BM_RocAuc(benchmark::State& state) {
  Rng rng(3);
  std::vector<ScoredLabel> items(static_cast<std::size_t>(state.range(0)));
  for (auto& it : items) {
    it.score = static_cast<double>(rng() % 1000);
    it.label = static_cast<int>(rng() % 2);
  }
  for (auto _ : state) benchmark::DoNotOptimize(roc_auc(items));
}
BENCHMARK(BM_RocAuc)->Arg(1000)->Arg(100000);

}  // namespace
}  // namespace anomagic

BENCHMARK_MAIN();
