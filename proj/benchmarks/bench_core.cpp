#include <benchmark/benchmark.h>

#include <random>

#include "mantra/autodiff.hpp"
#include "mantra/encdec.hpp"
#include "mantra/layers.hpp"
#include "mantra/memory.hpp"
#include "mantra/synthetic.hpp"

using namespace mantra;
using ad::Tensor;

namespace {

Tensor random_tensor(ad::Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> v(ad::element_count(shape));
  for (auto& x : v) x = d(rng);
  return Tensor::from(shape, v);
}

std::vector<Sample> samples() {
  SyntheticConfig cfg;
  cfg.with_maps = false;
  const auto ds = generate_synthetic_dataset(cfg, 3);
  return chunk_all(ds.train, ds.window);
}

}  // namespace

static void BM_Conv2dForward(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto in = random_tensor({1, 16, side, side}, 1);
  const auto w = random_tensor({32, 16, 3, 3}, 2);
  const auto b = random_tensor({32}, 3);
  ad::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ad::conv2d(in, w, b, 1, 1));
}
BENCHMARK(BM_Conv2dForward)->Arg(32)->Arg(64);

static void BM_GruStep(benchmark::State& state) {
  Rng rng(4);
  const auto p = GruParams::create(2, 48, rng);
  const auto x = random_tensor({32, 2}, 5);
  const auto h = random_tensor({32, 48}, 6);
  ad::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(gru_step(x, h, p));
}
BENCHMARK(BM_GruStep);

static void BM_GruSequenceBackward(benchmark::State& state) {
  Rng rng(7);
  const auto p = GruParams::create(2, 48, rng);
  std::vector<Tensor> xs;
  for (std::uint64_t t = 0; t < 8; ++t) xs.push_back(random_tensor({32, 2}, 10 + t));
  const auto target = random_tensor({32, 48}, 8);
  for (auto _ : state) {
    Tensor h = Tensor::zeros({32, 48});
    for (const auto& x : xs) h = gru_step(x, h, p);
    ad::mse(h, target).backward();
  }
}
BENCHMARK(BM_GruSequenceBackward);

static void BM_ReadTopK(benchmark::State& state) {
  const auto data = samples();
  const auto model = EncDecModel::create({}, 9);
  WriteRule all;
  all.write_all = true;
  MemoryStore memory;
  while (memory.size() < static_cast<std::size_t>(state.range(0))) {
    const auto batch = fill_memory(data, model, {}, all, memory.size());
    for (const auto& e : batch.entries()) memory.append(e);
  }
  const auto query = model.encode_past(data.front().past);
  for (auto _ : state) benchmark::DoNotOptimize(read_top_k(query, memory, 5));
}
BENCHMARK(BM_ReadTopK)->Arg(256)->Arg(4096);

static void BM_PredictBestOf5(benchmark::State& state) {
  const auto data = samples();
  const auto model = EncDecModel::create({}, 9);
  WriteRule all;
  all.write_all = true;
  const auto memory = fill_memory(data, model, {}, all);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(predict(data[i % data.size()].past, memory, 5, model));
    ++i;
  }
}
BENCHMARK(BM_PredictBestOf5);

BENCHMARK_MAIN();
