#include <benchmark/benchmark.h>

#include "neurocap/align/model.hpp"
#include "neurocap/autodiff/ops.hpp"
#include "neurocap/data/synthetic.hpp"
#include "neurocap/metrics/metrics.hpp"
#include "neurocap/nn/attention.hpp"
#include "neurocap/text/generate.hpp"
#include "neurocap/train/align_train.hpp"

using namespace neurocap;

namespace {

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c, bool grad = false) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.normal();
  return Tensor::from({r, c}, std::move(v), grad);
}

const data::Dataset& dataset() {
  static const data::Dataset ds = [] {
    data::GeneratorConfig g;
    return data::generate_dataset(g, 128);
  }();
  return ds;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = random_matrix(rng, n, n), b = random_matrix(rng, n, n);
  NoGradGuard g;
  for (auto _ : state) benchmark::DoNotOptimize(ops::matmul(a, b));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

static void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  Tensor a = random_matrix(rng, n, n, true), b = random_matrix(rng, n, n, true);
  for (auto _ : state) {
    tape::reset();
    a.clear_grad();
    b.clear_grad();
    backward(ops::sum(ops::matmul(a, b)));
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(64);

static void BM_SelfAttention(benchmark::State& state) {
  const auto tokens = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  nn::MultiHeadAttention attn(nn::BlockConfig{64, 4, 4, 1}, rng);
  const std::size_t batch = 8;
  const Tensor x = random_matrix(rng, batch * tokens, 64);
  NoGradGuard g;
  for (auto _ : state) benchmark::DoNotOptimize(attn.forward(x, x, batch, nn::AttentionMaskMode::kNone));
}
BENCHMARK(BM_SelfAttention)->Arg(16)->Arg(32);

static void BM_AlignStep(benchmark::State& state) {
  auto cfg = train::TrainConfig::defaults(train::Stage::kAlign);
  Rng rng(cfg.seed);
  align::NeuroCapModel model(cfg.model, rng);
  train::AlignTrainer trainer(model, dataset(), cfg);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step());
}
BENCHMARK(BM_AlignStep)->Unit(benchmark::kMillisecond);

static void BM_GreedyCaption(benchmark::State& state) {
  auto cfg = train::TrainConfig::defaults(train::Stage::kAlign);
  Rng rng(cfg.seed);
  align::NeuroCapModel model(cfg.model, rng);
  for (auto _ : state) benchmark::DoNotOptimize(text::generate_caption(model, dataset().sample(0).voxels));
}
BENCHMARK(BM_GreedyCaption)->Unit(benchmark::kMillisecond);

static void BM_CaptionMetrics(benchmark::State& state) {
  std::vector<metrics::EvalRecord> recs;
  for (std::size_t i = 0; i < 100; ++i) {
    const auto& s = dataset().sample(i);
    recs.push_back({std::to_string(i), s.caption_refs.back(), s.caption_refs});
  }
  for (auto _ : state) benchmark::DoNotOptimize(metrics::evaluate_captions(recs));
}
BENCHMARK(BM_CaptionMetrics)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
