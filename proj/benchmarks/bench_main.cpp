#include <benchmark/benchmark.h>

#include <random>

#include "featxlate/encoder.hpp"
#include "featxlate/eval.hpp"
#include "featxlate/losses.hpp"
#include "featxlate/networks.hpp"

using namespace featxlate;

namespace {

const EncoderProfile& vgg() {
  static const auto enc = Encoder::random_vgg19(0, false);
  return enc.profile();
}

void BM_DeepTranslatorVgg(benchmark::State& state) {
  torch::NoGradGuard no_grad;
  auto g = NetworkFactory(vgg()).deep_translator();
  auto x = torch::rand({state.range(0), 512, 14, 14}) * 2 - 1;
  for (auto _ : state) benchmark::DoNotOptimize(g->forward(x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DeepTranslatorVgg)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_ConditionalTranslatorVgg(benchmark::State& state) {
  torch::NoGradGuard no_grad;
  const int level = static_cast<int>(state.range(0));
  NetworkFactory f(vgg());
  auto g = f.conditional_translator(level);
  const auto& src = vgg().tap(level);
  const auto& content = vgg().tap(level + 1);
  auto s = torch::rand({1, src.channels, src.spatial, src.spatial});
  auto c = torch::rand({1, content.channels, content.spatial, content.spatial});
  for (auto _ : state) benchmark::DoNotOptimize(g->forward(s, c));
}
BENCHMARK(BM_ConditionalTranslatorVgg)->Arg(4)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_InverterVggL3(benchmark::State& state) {
  torch::NoGradGuard no_grad;
  auto inv = NetworkFactory(vgg()).inverter(3);
  auto x = torch::rand({1, 256, 56, 56}) * 2 - 1;
  for (auto _ : state) benchmark::DoNotOptimize(inv->forward(x));
}
BENCHMARK(BM_InverterVggL3)->Unit(benchmark::kMillisecond);

void BM_GradientPenalty(benchmark::State& state) {
  auto critic = NetworkFactory(vgg()).critic(5);
  auto real = torch::rand({4, 512, 14, 14});
  auto fake = torch::rand({4, 512, 14, 14});
  CriticFn fn = [&](const torch::Tensor& y) { return critic->forward(y); };
  for (auto _ : state) benchmark::DoNotOptimize(gradient_penalty(fn, real, fake, 10.0));
}
BENCHMARK(BM_GradientPenalty)->Unit(benchmark::kMillisecond);

void BM_FrechetDistance(benchmark::State& state) {
  const auto d = state.range(0);
  std::mt19937_64 rng(0);
  std::normal_distribution<double> z;
  Eigen::MatrixXd a(2 * d, d), b(2 * d, d);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    a.data()[i] = z(rng);
    b.data()[i] = z(rng) + 0.5;
  }
  auto ma = moments({"a", a, "bench"});
  auto mb = moments({"b", b, "bench"});
  for (auto _ : state) benchmark::DoNotOptimize(frechet_distance(ma, mb));
}
BENCHMARK(BM_FrechetDistance)->Arg(64)->Arg(512)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
