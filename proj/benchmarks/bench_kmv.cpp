#include <benchmark/benchmark.h>

#include "weaver/kron.hpp"
#include "weaver/rng.hpp"

using namespace weaver;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& x : t.values()) x = rng.uniform(-1.0, 1.0);
  return t;
}

struct KmvInputs {
  kron::FactorChain chain;
  Tensor v;
};

KmvInputs make_inputs(std::size_t n, std::size_t h, std::size_t d_head, std::size_t p,
                      std::size_t batch) {
  Rng rng(42);
  Tensor theta_t = random_tensor({h, p, p}, rng);
  Tensor theta_s = random_tensor({h, n, n}, rng);
  Tensor v = random_tensor({h, batch * d_head, p, n}, rng);
  return KmvInputs{kron::FactorChain({theta_t, theta_s}), std::move(v)};
}

void BM_P2KMV_Basic(benchmark::State& state) {
  auto in = make_inputs(std::size_t(state.range(0)), std::size_t(state.range(1)),
                        std::size_t(state.range(2)), 12, 32);
  for (auto _ : state) {
    benchmark::DoNotOptimize(kron::p2kmv_basic(in.chain, in.v));
  }
}

void BM_P2KMV_Efficient(benchmark::State& state) {
  auto in = make_inputs(std::size_t(state.range(0)), std::size_t(state.range(1)),
                        std::size_t(state.range(2)), 12, 32);
  for (auto _ : state) {
    benchmark::DoNotOptimize(kron::pkmv_efficient(in.chain, in.v));
  }
}

}  // namespace

BENCHMARK(BM_P2KMV_Basic)
    ->Args({16, 2, 8})
    ->Args({64, 2, 8})
    ->Args({64, 4, 16})
    ->Args({128, 8, 16});
BENCHMARK(BM_P2KMV_Efficient)
    ->Args({16, 2, 8})
    ->Args({64, 2, 8})
    ->Args({64, 4, 16})
    ->Args({128, 8, 16});
