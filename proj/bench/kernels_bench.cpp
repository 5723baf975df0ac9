// OpenMP kernels vs the serial reference at the shapes of the desk model
// (d_model 128, 4 heads, 257 rows including BOS, ffn 512).

#include <benchmark/benchmark.h>

#include <vector>

#include "a3/kernels.hpp"
#include "a3/net.hpp"
#include "a3/rng.hpp"

namespace {

std::vector<float> noise(std::size_t n, std::uint64_t seed) {
  a3::Rng rng(seed);
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(rng.normal());
  return v;
}

enum class Impl { parallel, serial };

template <Impl I>
void BM_gemm_nn(benchmark::State& st) {
  const auto m = static_cast<std::size_t>(st.range(0)), n = static_cast<std::size_t>(st.range(1)),
             k = static_cast<std::size_t>(st.range(2));
  const auto a = noise(m * k, 1), b = noise(k * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : st) {
    if constexpr (I == Impl::parallel) {
      a3::kernels::gemm_nn(m, n, k, a.data(), b.data(), c.data());
    } else {
      a3::reference::gemm_nn(m, n, k, a.data(), b.data(), c.data());
    }
    benchmark::DoNotOptimize(c.data());
  }
  st.counters["GFLOP/s"] = benchmark::Counter(2.0 * double(m * n * k), benchmark::Counter::kIsIterationInvariantRate,
                                              benchmark::Counter::kIs1000);
}

template <Impl I>
void BM_gemm_tn(benchmark::State& st) {
  const auto m = static_cast<std::size_t>(st.range(0)), n = static_cast<std::size_t>(st.range(1)),
             k = static_cast<std::size_t>(st.range(2));
  const auto a = noise(k * m, 1), b = noise(k * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : st) {
    if constexpr (I == Impl::parallel) {
      a3::kernels::gemm_tn(m, n, k, a.data(), b.data(), c.data());
    } else {
      a3::reference::gemm_tn(m, n, k, a.data(), b.data(), c.data());
    }
    benchmark::DoNotOptimize(c.data());
  }
  st.counters["GFLOP/s"] = benchmark::Counter(2.0 * double(m * n * k), benchmark::Counter::kIsIterationInvariantRate,
                                              benchmark::Counter::kIs1000);
}

template <Impl I>
void BM_attention(benchmark::State& st) {
  a3::AttentionShape s{257, 257, 128, 4};
  const auto q = noise(s.q_rows * s.dim, 1), k = noise(s.kv_rows * s.dim, 2), v = noise(s.kv_rows * s.dim, 3);
  const auto dctx = noise(s.q_rows * s.dim, 4);
  std::vector<std::uint8_t> mask(s.q_rows * s.kv_rows);
  for (std::size_t i = 0; i < s.q_rows; ++i) {
    for (std::size_t j = 0; j <= i; ++j) mask[i * s.kv_rows + j] = 1;
  }
  std::vector<float> probs(s.heads * s.q_rows * s.kv_rows), ctx(s.q_rows * s.dim);
  std::vector<float> dq(q.size()), dk(k.size()), dv(v.size());
  for (auto _ : st) {
    if constexpr (I == Impl::parallel) {
      a3::kernels::attention_forward(s, q.data(), k.data(), v.data(), mask.data(), probs.data(), ctx.data());
      a3::kernels::attention_backward(s, q.data(), k.data(), v.data(), mask.data(), probs.data(), dctx.data(),
                                      dq.data(), dk.data(), dv.data());
    } else {
      a3::reference::attention_forward(s, q.data(), k.data(), v.data(), mask.data(), probs.data(), ctx.data());
      a3::reference::attention_backward(s, q.data(), k.data(), v.data(), mask.data(), probs.data(),
                                        dctx.data(), dq.data(), dk.data(), dv.data());
    }
    benchmark::DoNotOptimize(dq.data());
  }
}

template <Impl I>
void BM_layernorm(benchmark::State& st) {
  const std::size_t rows = 257, dim = 128;
  const auto x = noise(rows * dim, 1), g = noise(dim, 2), b = noise(dim, 3), dy = noise(rows * dim, 4);
  std::vector<float> y(rows * dim), mean(rows), rstd(rows), dx(rows * dim), dg(dim), db(dim);
  for (auto _ : st) {
    if constexpr (I == Impl::parallel) {
      a3::kernels::layernorm_forward(rows, dim, x.data(), g.data(), b.data(), y.data(), mean.data(), rstd.data());
      a3::kernels::layernorm_backward(rows, dim, dy.data(), x.data(), g.data(), mean.data(), rstd.data(),
                                      dx.data(), dg.data(), db.data());
    } else {
      a3::reference::layernorm_forward(rows, dim, x.data(), g.data(), b.data(), y.data(), mean.data(),
                                       rstd.data());
      a3::reference::layernorm_backward(rows, dim, dy.data(), x.data(), g.data(), mean.data(), rstd.data(),
                                        dx.data(), dg.data(), db.data());
    }
    benchmark::DoNotOptimize(dx.data());
  }
}

template <Impl I>
void BM_gelu(benchmark::State& st) {
  const std::size_t n = 257 * 512;
  const auto x = noise(n, 1), dy = noise(n, 2);
  std::vector<float> y(n), dx(n);
  for (auto _ : st) {
    if constexpr (I == Impl::parallel) {
      a3::kernels::gelu_forward(n, x.data(), y.data());
      a3::kernels::gelu_backward(n, x.data(), dy.data(), dx.data());
    } else {
      a3::reference::gelu_forward(n, x.data(), y.data());
      a3::reference::gelu_backward(n, x.data(), dy.data(), dx.data());
    }
    benchmark::DoNotOptimize(dx.data());
  }
}

// One training sequence (forward + backward) of the desk model.
void BM_sequence_grad(benchmark::State& st) {
  a3::ModelConfig cfg;
  cfg.vocab_size = 40;
  a3::Rng rng(1);
  const auto params = a3::init_params(cfg, rng);
  std::vector<int> tokens(256);
  for (int& t : tokens) t = static_cast<int>(rng.below(40));
  const auto g = a3::make_permuted(256, 3, rng);
  a3::Params<float> grad(cfg);
  for (auto _ : st) {
    benchmark::DoNotOptimize(a3::accumulate_grad(params, tokens, g, grad));
  }
}

#define SHAPES Args({257, 128, 128})->Args({257, 512, 128})->Args({257, 128, 512})

BENCHMARK(BM_gemm_nn<Impl::parallel>)->SHAPES;
BENCHMARK(BM_gemm_nn<Impl::serial>)->SHAPES;
BENCHMARK(BM_gemm_tn<Impl::parallel>)->SHAPES;
BENCHMARK(BM_gemm_tn<Impl::serial>)->SHAPES;
BENCHMARK(BM_attention<Impl::parallel>);
BENCHMARK(BM_attention<Impl::serial>);
BENCHMARK(BM_layernorm<Impl::parallel>);
BENCHMARK(BM_layernorm<Impl::serial>);
BENCHMARK(BM_gelu<Impl::parallel>);
BENCHMARK(BM_gelu<Impl::serial>);
BENCHMARK(BM_sequence_grad)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
