#include <benchmark/benchmark.h>

#include <random>

#include "hetseg/config.hpp"
#include "hetseg/metrics.hpp"
#include "hetseg/objectives.hpp"
#include "hetseg/pseudo_label.hpp"
#include "hetseg/runtime.hpp"
#include "hetseg/segmentation.hpp"
#include "hetseg/translation.hpp"

using namespace hetseg;

namespace {

torch::Tensor soft(std::int64_t n, std::int64_t k, std::int64_t hw) {
  torch::manual_seed(0);
  return torch::softmax(torch::randn({n, k, hw, hw}), 1);
}

void BM_SegmenterForward(benchmark::State& state) {
  torch::NoGradGuard no_grad;
  const auto cfg = desk_preset();
  auto seg = seeded_init(0, [&] { return build_segmenter(cfg.segmenter); });
  seg->eval();
  const auto& spec = cfg.task.target_spec;
  const auto x = torch::rand({state.range(0), spec.channels, spec.height, spec.width}) * 2 - 1;
  for (auto _ : state) benchmark::DoNotOptimize(seg->forward(x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SegmenterForward)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_TranslateSourceToTarget(benchmark::State& state) {
  torch::NoGradGuard no_grad;
  const auto cfg = desk_preset();
  auto tr = seeded_init(0, [&] { return Translator(cfg.task.source_spec, cfg.task.target_spec, cfg.translation_net); });
  const auto& spec = cfg.task.source_spec;
  const auto n = state.range(0);
  const auto x = torch::rand({n, spec.channels, spec.height, spec.width}) * 2 - 1;
  auto gen = torch::make_generator<torch::CPUGeneratorImpl>(1);
  const auto s = sample_style_prior(gen, n, cfg.translation_net.style_dim);
  for (auto _ : state) benchmark::DoNotOptimize(tr->translate(x, Direction::source_to_target, s));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_TranslateSourceToTarget)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_SoftDiceBackward(benchmark::State& state) {
  const auto y = torch::one_hot(torch::randint(0, 2, {8, 64, 64}), 2).permute({0, 3, 1, 2}).to(torch::kFloat32);
  for (auto _ : state) {
    auto p = soft(8, 2, 64).requires_grad_();
    auto l = loss::soft_dice_loss(p, y);
    l.backward();
    benchmark::DoNotOptimize(p.grad());
  }
}
BENCHMARK(BM_SoftDiceBackward)->Unit(benchmark::kMicrosecond);

void BM_Entropy(benchmark::State& state) {
  const auto p = soft(8, 2, 64);
  for (auto _ : state) benchmark::DoNotOptimize(loss::entropy_loss(p));
}
BENCHMARK(BM_Entropy)->Unit(benchmark::kMicrosecond);

void BM_PseudoLabel(benchmark::State& state) {
  const auto p = soft(1, 2, state.range(0)).squeeze(0);
  for (auto _ : state) benchmark::DoNotOptimize(pseudo_label(p, 0.7));
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0));
}
BENCHMARK(BM_PseudoLabel)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

void BM_AveragePrecision(benchmark::State& state) {
  std::mt19937 rng(0);
  std::uniform_real_distribution<float> u(0.0F, 1.0F);
  std::bernoulli_distribution b(0.1);
  std::vector<float> scores(static_cast<std::size_t>(state.range(0)));
  std::vector<std::uint8_t> truth(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = u(rng);
    truth[i] = b(rng) ? 1 : 0;
  }
  for (auto _ : state) benchmark::DoNotOptimize(average_precision(scores, truth));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_AveragePrecision)->Arg(1 << 12)->Arg(1 << 16)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
