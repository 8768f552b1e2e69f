#include <benchmark/benchmark.h>

#include <vector>

#include "fedgrow/kernels.hpp"
#include "fedgrow/model.hpp"
#include "fedgrow/reference.hpp"
#include "fedgrow/rng.hpp"
#include "fedgrow/schedule.hpp"

using namespace fedgrow;

namespace {

std::vector<float> random_vector(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (float& x : v) x = rng.uniform() - 0.5f;
  return v;
}

// Second conv of the larger digit models: 14x14x32 -> 14x14x64, 5x5 kernel.
ConvGeometry digit_conv() {
  Conv2D conv{{5, 5, 32, 64}};
  return conv_geometry(conv, FeatureShape{14, 14, 32, false});
}

void BM_GemmReference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    reference::matmul(n, n, n, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

void BM_GemmKernel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    kernels::gemm(n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

void BM_ConvReference(benchmark::State& state) {
  const auto g = digit_conv();
  const std::size_t batch = 10;
  const auto in = random_vector(batch * g.in_h * g.in_w * g.in_c, 3);
  const auto w = random_vector(g.k_h * g.k_w * g.in_c * g.out_c, 4);
  const std::vector<float> bias(g.out_c, 0.0f);
  std::vector<float> out(batch * g.out_h * g.out_w * g.out_c);
  for (auto _ : state) {
    reference::conv2d_forward(g, batch, in.data(), w.data(), bias.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_ConvKernel(benchmark::State& state) {
  const auto g = digit_conv();
  const std::size_t batch = 10;
  const auto in = random_vector(batch * g.in_h * g.in_w * g.in_c, 3);
  const auto w = random_vector(g.k_h * g.k_w * g.in_c * g.out_c, 4);
  const std::vector<float> bias(g.out_c, 0.0f);
  std::vector<float> cols(batch * g.out_h * g.out_w * g.k_h * g.k_w * g.in_c);
  std::vector<float> out(batch * g.out_h * g.out_w * g.out_c);
  for (auto _ : state) {
    kernels::conv2d_forward(g, batch, in.data(), w.data(), bias.data(), cols.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_ConvBackwardReference(benchmark::State& state) {
  const auto g = digit_conv();
  const std::size_t batch = 10;
  const auto in = random_vector(batch * g.in_h * g.in_w * g.in_c, 3);
  const auto w = random_vector(g.k_h * g.k_w * g.in_c * g.out_c, 4);
  const auto og = random_vector(batch * g.out_h * g.out_w * g.out_c, 5);
  std::vector<float> wg(w.size()), bg(g.out_c), ig(in.size());
  for (auto _ : state) {
    reference::conv2d_backward(g, batch, in.data(), w.data(), og.data(), wg.data(), bg.data(), ig.data());
    benchmark::DoNotOptimize(wg.data());
  }
}

void BM_ConvBackwardKernel(benchmark::State& state) {
  const auto g = digit_conv();
  const std::size_t batch = 10;
  const auto in = random_vector(batch * g.in_h * g.in_w * g.in_c, 3);
  const auto w = random_vector(g.k_h * g.k_w * g.in_c * g.out_c, 4);
  const auto og = random_vector(batch * g.out_h * g.out_w * g.out_c, 5);
  std::vector<float> cols(batch * g.out_h * g.out_w * g.k_h * g.k_w * g.in_c);
  kernels::im2col(g, batch, in.data(), cols.data());
  std::vector<float> wg(w.size()), bg(g.out_c), ig(in.size());
  for (auto _ : state) {
    kernels::conv2d_backward(g, batch, cols.data(), w.data(), og.data(), wg.data(), bg.data(), ig.data());
    benchmark::DoNotOptimize(wg.data());
  }
}

// One local SGD step of the largest MNIST model at the client batch size.
void BM_TrainStepMnistModel6(benchmark::State& state) {
  const auto schedule = builtin_schedule("mnist");
  const ModelArch& arch = schedule.models.back();
  Rng rng(7);
  ModelParams params = init_params(arch, rng);
  Tensor batch({10, 28, 28, 1});
  for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = rng.uniform();
  const std::vector<int> labels{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  for (auto _ : state) {
    benchmark::DoNotOptimize(sgd_step(arch, params, batch, labels, 0.015f, rng));
  }
}

}  // namespace

BENCHMARK(BM_GemmReference)->Arg(128)->Arg(256);
BENCHMARK(BM_GemmKernel)->Arg(128)->Arg(256);
BENCHMARK(BM_ConvReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvKernel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardReference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardKernel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrainStepMnistModel6)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
