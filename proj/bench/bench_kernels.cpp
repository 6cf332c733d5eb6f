// Serial reference vs OpenMP kernels on the hot paths: brute-force top-k,
// the pairwise distance matrix used by guide outlier scoring, and batch
// embedding. Set OMP_NUM_THREADS to compare thread counts.
#include <benchmark/benchmark.h>

#include <random>

#include "needle/embedders/embedder.hpp"
#include "needle/genhub/scene.hpp"
#include "needle/kernels/distance.hpp"

using namespace needle;

namespace {

std::vector<float> unitRows(size_t n, size_t dim, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  std::vector<float> rows(n * dim);
  for (auto& x : rows) x = g(rng);
  for (size_t i = 0; i < n; ++i) kernels::normalize({rows.data() + i * dim, dim});
  return rows;
}

template <auto Fn>
void topK(benchmark::State& state) {
  const size_t n = state.range(0), dim = 64, k = 100;
  auto rows = unitRows(n, dim, 1);
  std::vector<uint64_t> ids(n);
  for (size_t i = 0; i < n; ++i) ids[i] = i;
  auto query = unitRows(1, dim, 2);
  kernels::ScanInput in{rows, ids, {}, dim, kernels::Metric::Cosine};
  for (auto _ : state) benchmark::DoNotOptimize(Fn(in, query, k));
  state.SetItemsProcessed(state.iterations() * n);
}

template <auto Fn>
void pairwise(benchmark::State& state) {
  const size_t n = state.range(0), dim = 64;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  std::vector<double> pts(n * dim);
  for (auto& x : pts) x = g(rng);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(pts, n, dim));
  state.SetItemsProcessed(state.iterations() * n * n);
}

std::vector<ImagePixels> scenes(size_t n) {
  std::vector<ImagePixels> out;
  for (size_t i = 0; i < n; ++i) {
    genhub::SceneSpec s;
    s.shape = static_cast<genhub::Shape>(i % 3);
    s.shapeColor = static_cast<genhub::Color>(i % 8);
    s.background = static_cast<genhub::Color>((i + 3) % 8);
    out.push_back(genhub::mockRender(s, i, 256));
  }
  return out;
}

template <auto Fn>
void embedAll(benchmark::State& state) {
  auto imgs = scenes(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(Fn(embedders::colorHistogram64, imgs));
  state.SetItemsProcessed(state.iterations() * imgs.size());
}

}  // namespace

BENCHMARK(topK<kernels::exactTopKSerial>)->Name("exactTopK/serial")->Arg(10'000)->Arg(100'000);
BENCHMARK(topK<kernels::exactTopKParallel>)->Name("exactTopK/parallel")->Arg(10'000)->Arg(100'000);
BENCHMARK(pairwise<kernels::pairwiseEuclideanSerial>)->Name("pairwise/serial")->Arg(64)->Arg(512);
BENCHMARK(pairwise<kernels::pairwiseEuclideanParallel>)->Name("pairwise/parallel")->Arg(64)->Arg(512);
BENCHMARK(embedAll<embedders::embedAllSerial>)->Name("embedAll/serial")->Arg(50);
BENCHMARK(embedAll<embedders::embedAllParallel>)->Name("embedAll/parallel")->Arg(50);

BENCHMARK_MAIN();
