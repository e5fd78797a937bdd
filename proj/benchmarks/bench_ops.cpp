#include <benchmark/benchmark.h>

#include <random>

#include "masc/ops.hpp"

using namespace masc;

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const Tensor a = Tensor::uniform({n, n}, -1, 1, rng);
  const Tensor b = Tensor::uniform({n, n}, -1, 1, rng);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

// Cosine similarity plus top-k over windows of w frames with J*D features.
static void BM_TemporalGraph(benchmark::State& state) {
  const auto w = static_cast<std::size_t>(state.range(0));
  const std::size_t windows = 243 / w;
  std::mt19937_64 rng(2);
  const Tensor h = Tensor::uniform({windows, w, 17 * 32}, -1, 1, rng);
  NoGradGuard ng;
  for (auto _ : state) {
    const Tensor s = cosine_similarity_matrix(h);
    benchmark::DoNotOptimize(topk_mask(s, 3));
  }
}
BENCHMARK(BM_TemporalGraph)->Arg(9)->Arg(27)->Arg(81);

static void BM_SparseAggregate(benchmark::State& state) {
  const std::size_t w = 27;
  std::mt19937_64 rng(3);
  std::vector<double> mask(w * w, 0.0);
  for (std::size_t i = 0; i < w; ++i) {
    mask[i * w + i] = 1.0;
    mask[i * w + (i + 1) % w] = 1.0;
    mask[i * w + (i + 5) % w] = 1.0;
  }
  const std::vector<SparseMatrix> a = {SparseMatrix::row_normalized(w, w, mask)};
  const Tensor x = Tensor::uniform({9, w, 17 * 32}, -1, 1, rng);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(sparse_aggregate(x, a));
}
BENCHMARK(BM_SparseAggregate);
