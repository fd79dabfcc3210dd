#include <benchmark/benchmark.h>

#include <random>

#include "tenslink/tensor.hpp"

namespace {

tenslink::DenseTensor random_tensor(const std::vector<std::size_t>& shape,
                                    unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  tenslink::DenseTensor x(shape);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = dist(rng);
  return x;
}

void BM_Unfold(benchmark::State& state) {
  auto x = random_tensor({64, 64, 64}, 1);
  const std::size_t mode = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(tenslink::unfold(x, mode));
}
BENCHMARK(BM_Unfold)->Arg(1)->Arg(2)->Arg(3);

void BM_ModeProduct(benchmark::State& state) {
  auto x = random_tensor({64, 64, 64}, 2);
  Eigen::MatrixXd b = Eigen::MatrixXd::Random(32, 64);
  for (auto _ : state)
    benchmark::DoNotOptimize(tenslink::mode_n_product(x, b, 2));
}
BENCHMARK(BM_ModeProduct);

}  // namespace

BENCHMARK_MAIN();
