#include <benchmark/benchmark.h>

#include "weaver/rng.hpp"
#include "weaver/tensor.hpp"

using namespace weaver;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& x : t.values()) x = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_BatchedMatmul(benchmark::State& state) {
  Rng rng(1);
  const auto b = std::size_t(state.range(0));
  const auto m = std::size_t(state.range(1));
  Tensor a = random_tensor({b, m, m}, rng);
  Tensor w = random_tensor({b, m, m}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(batched_matmul(a, w, true));
  }
}

void BM_Rearrange_Tumble(benchmark::State& state) {
  Rng rng(2);
  const auto h = std::size_t(state.range(0));
  const auto f = std::size_t(state.range(1));
  Tensor t = random_tensor({h, f * 12, 1, 64}, rng);
  RearrangeSpec spec = RearrangeSpec::parse("h (f d) r j -> h f (j r) d");
  spec.bind(t.shape(), {{"d", 12}});
  for (auto _ : state) {
    benchmark::DoNotOptimize(spec.apply(t));
  }
}

}  // namespace

BENCHMARK(BM_BatchedMatmul)->Args({8, 32})->Args({8, 128})->Args({32, 64});
BENCHMARK(BM_Rearrange_Tumble)->Args({2, 256})->Args({8, 512});
