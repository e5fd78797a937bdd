#include <benchmark/benchmark.h>

#include <random>

#include "masc/losses.hpp"
#include "masc/model.hpp"

using namespace masc;

namespace {

ModelConfig toy(int layers, int dim) {
  ModelConfig c;
  c.num_layers = layers;
  c.dim = dim;
  c.seq_len = 81;
  c.temporal_scales = {3, 9, 27};
  c.topk = 2;
  return c;
}

}  // namespace

static void BM_Forward(benchmark::State& state) {
  PoseLifter m(toy(static_cast<int>(state.range(0)), static_cast<int>(state.range(1))), default_h36m_topology(), 1);
  std::mt19937_64 rng(1);
  const Tensor x = Tensor::uniform({1, 81, 17, 3}, -1, 1, rng);
  ForwardContext ctx;
  ctx.training = false;
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(x, ctx));
}
BENCHMARK(BM_Forward)->Args({2, 16})->Args({4, 32})->Unit(benchmark::kMillisecond);

static void BM_TrainStep(benchmark::State& state) {
  PoseLifter m(toy(2, 16), default_h36m_topology(), 1);
  std::mt19937_64 rng(2);
  const Tensor x = Tensor::uniform({1, 81, 17, 3}, -1, 1, rng);
  const Tensor y = Tensor::uniform({1, 81, 17, 3}, -300, 300, rng);
  ForwardContext ctx;
  ctx.update_bn_stats = false;
  for (auto _ : state) {
    m.parameters().zero_grad();
    total_loss(m.forward(x, ctx), y).total.backward();
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
