// Serial reference kernels against their OpenMP counterparts.
#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "msaunet/kernels.hpp"

namespace k = msaunet::kernels;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// range(0) channels in and out, range(1) spatial side, 3x3 kernel, pad 1.
k::ConvGeometry conv_geometry(const benchmark::State& s) {
  const auto c = static_cast<std::size_t>(s.range(0));
  const auto side = static_cast<std::size_t>(s.range(1));
  return {1, c, side, side, c, side, side, 3, 1, 1};
}

template <auto Fn>
void conv_forward(benchmark::State& s) {
  const auto g = conv_geometry(s);
  const auto x = noise(g.input_size(), 1), w = noise(g.weight_size(), 2), b = noise(g.out_channels, 3);
  std::vector<double> y(g.output_size());
  for (auto _ : s) {
    Fn(g, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
  s.SetItemsProcessed(static_cast<std::int64_t>(s.iterations() * g.output_size() * g.in_channels * 9));
}

template <auto Fn>
void conv_backward_input(benchmark::State& s) {
  const auto g = conv_geometry(s);
  const auto dy = noise(g.output_size(), 1), w = noise(g.weight_size(), 2);
  std::vector<double> dx(g.input_size());
  for (auto _ : s) {
    Fn(g, dy, w, dx);
    benchmark::DoNotOptimize(dx.data());
  }
}

template <auto Fn>
void conv_backward_weight(benchmark::State& s) {
  const auto g = conv_geometry(s);
  const auto x = noise(g.input_size(), 1), dy = noise(g.output_size(), 2);
  std::vector<double> dw(g.weight_size()), db(g.out_channels);
  for (auto _ : s) {
    Fn(g, x, dy, dw, db);
    benchmark::DoNotOptimize(dw.data());
  }
}

// range(0) planes, range(1) input side; output is twice the side.
template <auto Fn>
void resize(benchmark::State& s) {
  const auto planes = static_cast<std::size_t>(s.range(0));
  const auto side = static_cast<std::size_t>(s.range(1));
  const auto x = noise(planes * side * side, 1);
  std::vector<double> y(planes * 4 * side * side);
  for (auto _ : s) {
    Fn(planes, side, side, 2 * side, 2 * side, x, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <auto Moments, auto Normalize>
void batch_norm(benchmark::State& s) {
  const k::NormGeometry g{4, static_cast<std::size_t>(s.range(0)), static_cast<std::size_t>(s.range(1) * s.range(1))};
  const auto x = noise(g.batch * g.channels * g.plane, 1);
  const auto gamma = noise(g.channels, 2), beta = noise(g.channels, 3);
  std::vector<double> mean(g.channels), var(g.channels), inv(g.channels, 1.0), y(x.size());
  for (auto _ : s) {
    Moments(g, x, mean, var);
    Normalize(g, x, mean, inv, gamma, beta, y);
    benchmark::DoNotOptimize(y.data());
  }
}

void conv_args(benchmark::internal::Benchmark* b) { b->Args({16, 64})->Args({64, 32})->Args({256, 8}); }
void resize_args(benchmark::internal::Benchmark* b) { b->Args({16, 64})->Args({256, 14}); }
void norm_args(benchmark::internal::Benchmark* b) { b->Args({16, 64})->Args({256, 14}); }

}  // namespace

BENCHMARK(conv_forward<k::serial::conv2d_forward>)->Name("conv_forward/serial")->Apply(conv_args);
BENCHMARK(conv_forward<k::parallel::conv2d_forward>)->Name("conv_forward/parallel")->Apply(conv_args);
BENCHMARK(conv_backward_input<k::serial::conv2d_backward_input>)->Name("conv_backward_input/serial")->Apply(conv_args);
BENCHMARK(conv_backward_input<k::parallel::conv2d_backward_input>)
    ->Name("conv_backward_input/parallel")
    ->Apply(conv_args);
BENCHMARK(conv_backward_weight<k::serial::conv2d_backward_weight>)
    ->Name("conv_backward_weight/serial")
    ->Apply(conv_args);
BENCHMARK(conv_backward_weight<k::parallel::conv2d_backward_weight>)
    ->Name("conv_backward_weight/parallel")
    ->Apply(conv_args);
BENCHMARK(resize<k::serial::resize_bilinear_forward>)->Name("resize_bilinear/serial")->Apply(resize_args);
BENCHMARK(resize<k::parallel::resize_bilinear_forward>)->Name("resize_bilinear/parallel")->Apply(resize_args);
BENCHMARK(batch_norm<k::serial::channel_moments, k::serial::normalize_affine>)
    ->Name("batch_norm/serial")
    ->Apply(norm_args);
BENCHMARK(batch_norm<k::parallel::channel_moments, k::parallel::normalize_affine>)
    ->Name("batch_norm/parallel")
    ->Apply(norm_args);

BENCHMARK_MAIN();
