// Serial reference vs OpenMP/GEMM convolution kernels.
//   ./bench_kernels --benchmark_filter=forward
#include <benchmark/benchmark.h>

#include <vector>

#include "schoolcount/kernels.hpp"
#include "schoolcount/rng.hpp"

using namespace schoolcount;
using namespace schoolcount::kernels;

namespace {

// (in_c, h, w, out_c, stride): a stem layer, a mid-network layer and a late one
// at the default 320x576 input.
const ConvGeometry kShapes[] = {
    {3, 320, 576, 16, 3, 2, 1},
    {32, 80, 144, 32, 3, 1, 1},
    {128, 20, 36, 256, 3, 2, 1},
};

struct Buffers {
  std::vector<float> x, w, y, dy, dx, dw;
  explicit Buffers(const ConvGeometry& g)
      : x(g.in_size()), w(g.weight_size()), y(g.out_size()), dy(g.out_size()), dx(g.in_size()), dw(g.weight_size()) {
    Rng rng(1);
    for (auto* v : {&x, &w, &dy})
      for (auto& e : *v) e = static_cast<float>(rng.uniform(-1, 1));
  }
};

void set_flops(benchmark::State& state, const ConvGeometry& g, double passes) {
  const double macs = static_cast<double>(g.out_size()) * g.in_c * g.kernel * g.kernel;
  state.counters["GFLOP/s"] = benchmark::Counter(2 * macs * passes, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}

template <bool Parallel>
void BM_forward(benchmark::State& state) {
  const auto& g = kShapes[state.range(0)];
  Buffers b(g);
  for (auto _ : state) {
    if constexpr (Parallel) {
      parallel::conv2d_forward<float>(g, b.x, b.w, b.y);
    } else {
      reference::conv2d_forward<float>(g, b.x, b.w, b.y);
    }
    benchmark::DoNotOptimize(b.y.data());
  }
  set_flops(state, g, 1);
}

template <bool Parallel>
void BM_backward(benchmark::State& state) {
  const auto& g = kShapes[state.range(0)];
  Buffers b(g);
  for (auto _ : state) {
    if constexpr (Parallel) {
      parallel::conv2d_backward_input<float>(g, b.dy, b.w, b.dx);
      parallel::conv2d_backward_weight<float>(g, b.x, b.dy, b.dw);
    } else {
      reference::conv2d_backward_input<float>(g, b.dy, b.w, b.dx);
      reference::conv2d_backward_weight<float>(g, b.x, b.dy, b.dw);
    }
    benchmark::DoNotOptimize(b.dx.data());
    benchmark::DoNotOptimize(b.dw.data());
  }
  set_flops(state, g, 2);
}

}  // namespace

BENCHMARK(BM_forward<false>)->Name("forward/reference")->DenseRange(0, 2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_forward<true>)->Name("forward/parallel")->DenseRange(0, 2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_backward<false>)->Name("backward/reference")->DenseRange(0, 2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_backward<true>)->Name("backward/parallel")->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
