// Kernel benchmark: OpenMP-parallel entry points vs the serial reference.
// Run with --benchmark_counters_tabular=true for a compact table.

#include <benchmark/benchmark.h>

#include <vector>

#include "ctpe/kernels.hpp"
#include "ctpe/rng.hpp"

using namespace ctpe;

namespace {

std::vector<double> random_vec(size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

struct ConvSetup {
    int C = 32, H = 16, W = 16, OC = 64, stride = 1, pad = 1;
    int OH() const { return (H + 2 * pad - 3) / stride + 1; }
    int OW() const { return (W + 2 * pad - 3) / stride + 1; }
    std::vector<double> in = random_vec(static_cast<size_t>(C) * H * W, 1);
    std::vector<double> w = random_vec(static_cast<size_t>(OC) * C * 9, 2);
    std::vector<double> bias = random_vec(OC, 3);
};

} // namespace

static void BM_conv2d_forward_parallel(benchmark::State& state) {
    ConvSetup s;
    std::vector<double> out(static_cast<size_t>(s.OC) * s.OH() * s.OW());
    for (auto _ : state) {
        kernels::conv2d_forward(s.in.data(), s.C, s.H, s.W, s.w.data(), s.bias.data(), s.OC, 3, 3,
                                s.stride, s.pad, out.data(), s.OH(), s.OW());
        benchmark::ClobberMemory();
    }
}
BENCHMARK(BM_conv2d_forward_parallel);

static void BM_conv2d_forward_serial(benchmark::State& state) {
    ConvSetup s;
    std::vector<double> out(static_cast<size_t>(s.OC) * s.OH() * s.OW());
    for (auto _ : state) {
        kernels::serial::conv2d_forward(s.in.data(), s.C, s.H, s.W, s.w.data(), s.bias.data(),
                                        s.OC, 3, 3, s.stride, s.pad, out.data(), s.OH(), s.OW());
        benchmark::ClobberMemory();
    }
}
BENCHMARK(BM_conv2d_forward_serial);

static void BM_conv2d_backward_params_parallel(benchmark::State& state) {
    ConvSetup s;
    const auto gout = random_vec(static_cast<size_t>(s.OC) * s.OH() * s.OW(), 4);
    std::vector<double> gw(s.w.size()), gb(s.OC);
    for (auto _ : state) {
        std::fill(gw.begin(), gw.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        kernels::conv2d_backward_params(s.in.data(), s.C, s.H, s.W, gout.data(), s.OC, s.OH(),
                                        s.OW(), 3, 3, s.stride, s.pad, gw.data(), gb.data());
        benchmark::ClobberMemory();
    }
}
BENCHMARK(BM_conv2d_backward_params_parallel);

static void BM_conv2d_backward_params_serial(benchmark::State& state) {
    ConvSetup s;
    const auto gout = random_vec(static_cast<size_t>(s.OC) * s.OH() * s.OW(), 4);
    std::vector<double> gw(s.w.size()), gb(s.OC);
    for (auto _ : state) {
        std::fill(gw.begin(), gw.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        kernels::serial::conv2d_backward_params(s.in.data(), s.C, s.H, s.W, gout.data(), s.OC,
                                                s.OH(), s.OW(), 3, 3, s.stride, s.pad, gw.data(),
                                                gb.data());
        benchmark::ClobberMemory();
    }
}
BENCHMARK(BM_conv2d_backward_params_serial);

static void BM_matmul_parallel(benchmark::State& state) {
    const int M = 256, K = 256, N = 256;
    const auto a = random_vec(static_cast<size_t>(M) * K, 5);
    const auto b = random_vec(static_cast<size_t>(K) * N, 6);
    std::vector<double> c(static_cast<size_t>(M) * N);
    for (auto _ : state) {
        kernels::matmul(a.data(), M, K, b.data(), N, c.data());
        benchmark::ClobberMemory();
    }
}
BENCHMARK(BM_matmul_parallel);

static void BM_matmul_serial(benchmark::State& state) {
    const int M = 256, K = 256, N = 256;
    const auto a = random_vec(static_cast<size_t>(M) * K, 5);
    const auto b = random_vec(static_cast<size_t>(K) * N, 6);
    std::vector<double> c(static_cast<size_t>(M) * N);
    for (auto _ : state) {
        kernels::serial::matmul(a.data(), M, K, b.data(), N, c.data());
        benchmark::ClobberMemory();
    }
}
BENCHMARK(BM_matmul_serial);

static void BM_window_transform_parallel(benchmark::State& state) {
    std::vector<int16_t> hu(512 * 512);
    Rng rng(7);
    for (auto& v : hu) v = static_cast<int16_t>(rng.uniform_int(-1024, 3071));
    std::vector<float> out(hu.size());
    for (auto _ : state) {
        kernels::window_transform(hu.data(), hu.size(), 100.0, 700.0, out.data());
        benchmark::ClobberMemory();
    }
}
BENCHMARK(BM_window_transform_parallel);

static void BM_window_transform_serial(benchmark::State& state) {
    std::vector<int16_t> hu(512 * 512);
    Rng rng(7);
    for (auto& v : hu) v = static_cast<int16_t>(rng.uniform_int(-1024, 3071));
    std::vector<float> out(hu.size());
    for (auto _ : state) {
        kernels::serial::window_transform(hu.data(), hu.size(), 100.0, 700.0, out.data());
        benchmark::ClobberMemory();
    }
}
BENCHMARK(BM_window_transform_serial);

BENCHMARK_MAIN();
