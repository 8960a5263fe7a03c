#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "gradcf/data_io.hpp"
#include "gradcf/gradual.hpp"
#include "gradcf/kernels.hpp"
#include "gradcf/tensor_net.hpp"

namespace {

using namespace gradcf;

struct Problem {
  std::vector<double> w, x, b, y;
  std::size_t rows, cols;

  Problem(std::size_t r, std::size_t c) : w(r * c), x(c), b(r), y(r), rows(r), cols(c) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> d;
    for (auto* v : {&w, &x, &b}) {
      for (double& e : *v) e = d(rng);
    }
  }
  kernels::MatrixView view() const { return {w, rows, cols}; }
};

void BM_GemvSerial(benchmark::State& state) {
  Problem p(static_cast<std::size_t>(state.range(0)), 784);
  for (auto _ : state) {
    kernels::serial::gemv(p.view(), p.x, p.b, p.y);
    benchmark::DoNotOptimize(p.y.data());
  }
}

void BM_GemvParallel(benchmark::State& state) {
  Problem p(static_cast<std::size_t>(state.range(0)), 784);
  for (auto _ : state) {
    kernels::parallel::gemv(p.view(), p.x, p.b, p.y);
    benchmark::DoNotOptimize(p.y.data());
  }
}

void BM_GemvTransposedSerial(benchmark::State& state) {
  Problem p(static_cast<std::size_t>(state.range(0)), 784);
  std::vector<double> out(784);
  for (auto _ : state) {
    kernels::serial::gemv_transposed(p.view(), p.b, out);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_GemvTransposedParallel(benchmark::State& state) {
  Problem p(static_cast<std::size_t>(state.range(0)), 784);
  std::vector<double> out(784);
  for (auto _ : state) {
    kernels::parallel::gemv_transposed(p.view(), p.b, out);
    benchmark::DoNotOptimize(out.data());
  }
}

// One composition-step evaluation on an MNIST-sized MLP.
void BM_GradualLossEval(benchmark::State& state) {
  const std::vector<std::size_t> widths{784, 64, 32, 10};
  const net::NetworkModel model = net::make_mlp(widths, 3);
  std::vector<double> x(784, 0.5), xp(784, 0.4), mean(10, 0.0);
  for (auto _ : state) {
    auto eval = explain::gradual_loss_eval(model, xp, x, mean, 0, 0.3);
    benchmark::DoNotOptimize(eval.value);
  }
}

BENCHMARK(BM_GemvSerial)->Arg(64)->Arg(256)->Arg(1024);
BENCHMARK(BM_GemvParallel)->Arg(64)->Arg(256)->Arg(1024);
BENCHMARK(BM_GemvTransposedSerial)->Arg(64)->Arg(1024);
BENCHMARK(BM_GemvTransposedParallel)->Arg(64)->Arg(1024);
BENCHMARK(BM_GradualLossEval);

}  // namespace

BENCHMARK_MAIN();
