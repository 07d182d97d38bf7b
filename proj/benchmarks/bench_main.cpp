#include <benchmark/benchmark.h>

#include "popgraph/graph.hpp"
#include "popgraph/rng.hpp"
#include "popgraph/tape.hpp"
#include "popgraph/trainer.hpp"

using namespace popgraph;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(-1.0, 1.0);
  return m;
}

PreparedData population(std::size_t subjects) {
  SyntheticConfig sc;
  sc.subjects = subjects;
  auto ds = generate_synthetic(sc, 1);
  normalize_minmax(ds);
  return PreparedData::from(ds);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = Tensor::constant(random_matrix(n, 64, 1));
  const Tensor b = Tensor::constant(random_matrix(64, 32, 2));
  for (auto _ : state) {
    Tape tape;
    benchmark::DoNotOptimize(tape.matmul(a, b).value()[0]);
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(4)->Range(256, 4096)->Complexity(benchmark::oN);

void BM_PairwiseDistance(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto metric = static_cast<DistanceMetric>(state.range(1));
  const Matrix f = random_matrix(n, 20, 3);
  Matrix scaled = f;
  for (double& v : scaled.values()) v *= 0.04;  // stay inside the unit ball
  for (auto _ : state) benchmark::DoNotOptimize(pairwise_distance(scaled, metric)[0]);
}
BENCHMARK(BM_PairwiseDistance)
    ->ArgsProduct({{250, 1000}, {static_cast<int>(DistanceMetric::euclidean), static_cast<int>(DistanceMetric::cosine),
                                 static_cast<int>(DistanceMetric::hyperbolic)}});

void BM_GumbelTopk(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix logp = edge_log_probabilities(pairwise_distance(random_matrix(n, 20, 4), DistanceMetric::euclidean), 5.0);
  Rng rng(5);
  for (auto _ : state) benchmark::DoNotOptimize(gumbel_topk_sample(logp, 5, rng));
}
BENCHMARK(BM_GumbelTopk)->Arg(250)->Arg(1000);

void BM_Symmetrize(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(6);
  const EdgeList edges = random_graph(n, 5, rng);
  for (auto _ : state) benchmark::DoNotOptimize(symmetrize(edges, n));
}
BENCHMARK(BM_Symmetrize)->Arg(1000)->Arg(10000);

void BM_TrainEpoch(benchmark::State& state) {
  const PreparedData data = population(static_cast<std::size_t>(state.range(0)));
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.patience = 0;
  cfg.inference_samples = 1;
  for (auto _ : state) benchmark::DoNotOptimize(train(data, cfg).history.size());
}
BENCHMARK(BM_TrainEpoch)->Arg(250)->Arg(1000)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
