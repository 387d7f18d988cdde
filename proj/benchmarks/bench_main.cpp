#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "fccnn/ccrf.hpp"
#include "fccnn/evalio.hpp"
#include "fccnn/featnet.hpp"
#include "fccnn/pipeline.hpp"
#include "fccnn/sp_graph.hpp"
#include "fccnn/sppool.hpp"

using namespace fccnn;

namespace {

eval::ToyFace face(int size) {
  std::mt19937_64 rng(42);
  return eval::generate_toy_face(rng, size);
}

void BM_Oversegment(benchmark::State& state) {
  const auto f = face(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(sp::oversegment(f.image, 64));
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0));
}
BENCHMARK(BM_Oversegment)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_Conv3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor x(c, 64, 64);
  for (double& v : x.data()) v = u(rng);
  net::ConvGeometry g;
  g.in_channels = c;
  g.out_channels = c;
  g.kernel_h = g.kernel_w = 3;
  g.pad_h = g.pad_w = 1;
  g.padding = net::Padding::Replicate;
  std::vector<double> w(g.filter_size()), b(c);
  for (double& v : w) v = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(net::conv2d(x, w, b, g));
}
BENCHMARK(BM_Conv3x3)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMicrosecond);

void BM_GaussSeidel(benchmark::State& state) {
  const auto f = face(128);
  const auto map = sp::oversegment(f.image, static_cast<int>(state.range(0)));
  const auto graph = sp::build_graph(map);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  pool::RegionAffinity w;
  w.regions = map.region_count;
  for (const auto& e : graph.edges) {
    w.edges.emplace_back(e.p, e.q);
    w.weights.push_back(u(rng));
  }
  const auto sys = crf::assemble_system(w, 1.0);
  std::vector<double> b(map.region_count), x0(map.region_count, 0.0);
  for (double& v : b) v = u(rng) - 0.5;
  for (auto _ : state) benchmark::DoNotOptimize(crf::gauss_seidel_solve(sys, b, x0));
  state.counters["regions"] = map.region_count;
}
BENCHMARK(BM_GaussSeidel)->Arg(64)->Arg(256)->Arg(1024)->Unit(benchmark::kMicrosecond);

void BM_TrainingStep(benchmark::State& state) {
  auto f = face(64);
  const auto ex = pipeline::prepare_example(std::move(f.image), std::move(f.labels), 64, 10.0);
  const pipeline::ModelConfig model;
  const auto params = net::NetParams::initialize(net::ArchConfig{}, 42);
  for (auto _ : state) {
    const auto fwd = pipeline::forward(ex.image, &ex.labels, params, ex.map, ex.graph, model);
    benchmark::DoNotOptimize(pipeline::backward(fwd.cache, params));
  }
}
BENCHMARK(BM_TrainingStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
