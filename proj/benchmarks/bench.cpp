#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "modrobe/graph.hpp"
#include "modrobe/losses.hpp"
#include "modrobe/metrics.hpp"
#include "modrobe/rng.hpp"
#include "modrobe/score_matrix.hpp"
#include "modrobe/scores.hpp"
#include "modrobe/tensor.hpp"

using namespace modrobe;

namespace {

Tensor<double> rand_mat(std::uint64_t seed, std::size_t r, std::size_t c) {
  Tensor<double> t({r, c});
  Rng rng(seed);
  rng.fill_normal(t, 0.0, 1.0);
  return t;
}

}  // namespace

static void BM_matmul(benchmark::State& state) {
  std::size_t n = static_cast<std::size_t>(state.range(0));
  Tensor<double> a = rand_mat(1, n, n), b = rand_mat(2, n, n);
  for (auto _ : state) {
    Graph<double> g;
    benchmark::DoNotOptimize(g.value(g.matmul(g.constant(a), g.constant(b))));
  }
}
BENCHMARK(BM_matmul)->Arg(32)->Arg(128);

static void BM_softmax_rows(benchmark::State& state) {
  Tensor<double> x = rand_mat(3, 512, 64);
  for (auto _ : state) {
    Graph<double> g;
    benchmark::DoNotOptimize(g.value(g.softmax_rows(g.constant(x))));
  }
}
BENCHMARK(BM_softmax_rows);

static void BM_mlp_backward(benchmark::State& state) {
  // forward + backward of a hidden layer about the size the trainer uses
  Tensor<double> x = rand_mat(4, 64, 32);
  Tensor<double> w1 = rand_mat(5, 32, 64), b1 = rand_mat(6, 1, 64);
  Tensor<double> w2 = rand_mat(7, 64, 10), b2 = rand_mat(8, 1, 10);
  Shape vec1{64}, vec2{10};
  Tensor<double> b1v(vec1, {b1.data().begin(), b1.data().end()});
  Tensor<double> b2v(vec2, {b2.data().begin(), b2.data().end()});
  for (auto _ : state) {
    Graph<double> g;
    NodeId W1 = g.leaf(w1, true, "w1"), B1 = g.leaf(b1v, true, "b1");
    NodeId W2 = g.leaf(w2, true, "w2"), B2 = g.leaf(b2v, true, "b2");
    NodeId h = g.relu(g.add_rowwise(g.matmul(g.constant(x), W1), B1));
    NodeId out = g.add_rowwise(g.matmul(h, W2), B2);
    g.backward(g.mean_all(g.mul(out, out)));
    benchmark::DoNotOptimize(g.param_grads());
  }
}
BENCHMARK(BM_mlp_backward);

static void BM_infonce(benchmark::State& state) {
  std::size_t b = static_cast<std::size_t>(state.range(0));
  Tensor<double> za = rand_mat(9, b, 32), zb = rand_mat(10, b, 32);
  ContrastiveConfig cfg;
  for (auto _ : state) {
    Graph<double> g;
    NodeId loss = infonce_pair(g, g.constant(za), g.constant(zb), cfg);
    g.backward(loss);
    benchmark::DoNotOptimize(g.value(loss));
  }
}
BENCHMARK(BM_infonce)->Arg(64)->Arg(256);

static void BM_mean_average_precision(benchmark::State& state) {
  std::size_t n = 1024, c = 10;
  Tensor<double> scores = rand_mat(11, n, c);
  Rng rng(12);
  std::vector<std::vector<std::uint8_t>> labels(n,
                                                std::vector<std::uint8_t>(c));
  for (auto& row : labels)
    for (auto& v : row) v = rng.bernoulli(0.2) ? 1 : 0;
  labels[0][0] = 1;  // guarantee at least one positive
  for (auto _ : state)
    benchmark::DoNotOptimize(mean_average_precision(scores, labels));
}
BENCHMARK(BM_mean_average_precision);

static void BM_compute_metrics(benchmark::State& state) {
  ModalityUniverse u({"a", "b", "c"});
  ScoreMatrix m;
  m.universe = u;
  m.kind = ScoreKind::map;
  Rng rng(13);
  for (ModalitySet mt : u.nonempty_subsets())
    for (ModalitySet me : u.nonempty_subsets())
      m.set(mt, me, rng.uniform(0.0, 1.0));
  for (auto _ : state) benchmark::DoNotOptimize(compute_metrics(m));
}
BENCHMARK(BM_compute_metrics);

BENCHMARK_MAIN();
