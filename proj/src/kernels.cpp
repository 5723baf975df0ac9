#include "a3/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

namespace a3 {

int kernel_threads() { return omp_get_max_threads(); }

namespace kernels {
namespace {

// Below this many multiply-adds a kernel runs on the calling thread.
constexpr std::size_t kParallelWork = 1 << 15;

using Index = std::ptrdiff_t;

// exp/tanh that the compiler can vectorize. The float versions use a
// Cephes-style range reduction and polynomial (about 2 ulp); double keeps
// libm so gradient checks run at full precision.
inline float vexp(float x) {
  x = x < -87.0f ? -87.0f : x;
  x = x > 88.0f ? 88.0f : x;
  const float k = std::floor(x * 1.44269504088896341f + 0.5f);
  const float r = x - k * 0.693359375f + k * 2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  p = p * r * r + r + 1.0f;
  const auto bits = static_cast<std::int32_t>(k) + 127;
  return p * std::bit_cast<float>(bits << 23);
}

inline double vexp(double x) { return std::exp(x); }

inline float vtanh(float x) {
  const float e = vexp(2.0f * std::min(std::max(x, -9.0f), 9.0f));
  return (e - 1.0f) / (e + 1.0f);
}

inline double vtanh(double x) { return std::tanh(x); }



template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (Index i = 0; i < static_cast<Index>(rows); ++i) {
    for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
  }
}

}  // namespace

namespace {

// 4 x W block of C held in local accumulators across the whole k loop.
template <std::size_t kTileCols, typename T>
void tile_4xw(std::size_t n, std::size_t k, const T* a, const T* b, T* c, std::size_t j0,
              bool accumulate) {
  T acc[4][kTileCols];
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t j = 0; j < kTileCols; ++j) acc[r][j] = accumulate ? c[r * n + j0 + j] : T(0);
  }
  for (std::size_t p = 0; p < k; ++p) {
    const T x0 = a[p], x1 = a[k + p], x2 = a[2 * k + p], x3 = a[3 * k + p];
    const T* bp = b + p * n + j0;
#pragma omp simd
    for (std::size_t j = 0; j < kTileCols; ++j) {
      acc[0][j] += x0 * bp[j];
      acc[1][j] += x1 * bp[j];
      acc[2][j] += x2 * bp[j];
      acc[3][j] += x3 * bp[j];
    }
  }
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t j = 0; j < kTileCols; ++j) c[r * n + j0 + j] = acc[r][j];
  }
}

// Rows [i0, i0 + rows) and columns [j0, n) the tiles do not cover.
template <typename T>
void edge_rows(std::size_t n, std::size_t k, const T* a, const T* b, T* c, std::size_t rows,
               std::size_t j0, bool accumulate) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* ci = c + r * n;
    const T* ai = a + r * k;
    if (!accumulate) std::fill(ci + j0, ci + n, T(0));
    for (std::size_t p = 0; p < k; ++p) {
      const T x = ai[p];
      const T* bp = b + p * n;
#pragma omp simd
      for (std::size_t j = j0; j < n; ++j) ci[j] += x * bp[j];
    }
  }
}

}  // namespace

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  const Index blocks = static_cast<Index>((m + 3) / 4);
  const std::size_t wide = n - n % 64;
  const std::size_t narrow = n - n % 16;
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
  for (Index blk = 0; blk < blocks; ++blk) {
    const std::size_t i0 = static_cast<std::size_t>(blk) * 4;
    const std::size_t rows = std::min<std::size_t>(4, m - i0);
    const T* ablk = a + i0 * k;
    T* cblk = c + i0 * n;
    if (rows == 4) {
      for (std::size_t j0 = 0; j0 < wide; j0 += 64) tile_4xw<64>(n, k, ablk, b, cblk, j0, accumulate);
      for (std::size_t j0 = wide; j0 < narrow; j0 += 16) {
        tile_4xw<16>(n, k, ablk, b, cblk, j0, accumulate);
      }
      if (narrow < n) edge_rows(n, k, ablk, b, cblk, rows, narrow, accumulate);
    } else {
      edge_rows(n, k, ablk, b, cblk, rows, 0, accumulate);
    }
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  std::vector<T> bt(n * k);
  transpose(n, k, b, bt.data());
  gemm_nn(m, n, k, a, bt.data(), c, accumulate);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  std::vector<T> at(m * k);
  transpose(k, m, a, at.data());
  gemm_nn(m, n, k, at.data(), b, c, accumulate);
}

template <typename T>
void layernorm_forward(std::size_t rows, std::size_t dim, const T* x, const T* gamma,
                       const T* beta, T* y, T* mean, T* rstd) {
#pragma omp parallel for schedule(static) if (rows * dim > kParallelWork)
  for (Index i = 0; i < static_cast<Index>(rows); ++i) {
    const T* xi = x + static_cast<std::size_t>(i) * dim;
    T* yi = y + static_cast<std::size_t>(i) * dim;
    T mu = 0;
    for (std::size_t j = 0; j < dim; ++j) mu += xi[j];
    mu /= static_cast<T>(dim);
    T var = 0;
    for (std::size_t j = 0; j < dim; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<T>(dim);
    const T rs = T(1) / std::sqrt(var + T(1e-5));
    for (std::size_t j = 0; j < dim; ++j) yi[j] = (xi[j] - mu) * rs * gamma[j] + beta[j];
    mean[i] = mu;
    rstd[i] = rs;
  }
}

template <typename T>
void layernorm_backward(std::size_t rows, std::size_t dim, const T* dy, const T* x,
                        const T* gamma, const T* mean, const T* rstd, T* dx, T* dgamma,
                        T* dbeta) {
#pragma omp parallel for schedule(static) if (rows * dim > kParallelWork)
  for (Index i = 0; i < static_cast<Index>(rows); ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * dim;
    const T mu = mean[i], rs = rstd[i];
    T mean_g = 0, mean_gx = 0;
    for (std::size_t j = 0; j < dim; ++j) {
      const T xhat = (x[off + j] - mu) * rs;
      const T g = dy[off + j] * gamma[j];
      mean_g += g;
      mean_gx += g * xhat;
    }
    mean_g /= static_cast<T>(dim);
    mean_gx /= static_cast<T>(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      const T xhat = (x[off + j] - mu) * rs;
      dx[off + j] += rs * (dy[off + j] * gamma[j] - mean_g - xhat * mean_gx);
    }
  }
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t off = i * dim;
    const T mu = mean[i], rs = rstd[i];
#pragma omp simd
    for (std::size_t j = 0; j < dim; ++j) {
      dgamma[j] += dy[off + j] * (x[off + j] - mu) * rs;
      dbeta[j] += dy[off + j];
    }
  }
}

namespace {
template <typename T>
constexpr T kGeluC = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
template <typename T>
constexpr T kGeluA = static_cast<T>(0.044715);
}  // namespace

template <typename T>
void gelu_forward(std::size_t n, const T* x, T* y) {
#pragma omp parallel for simd schedule(static) if (n > kParallelWork)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    const T v = x[i];
    y[i] = T(0.5) * v * (T(1) + vtanh(kGeluC<T> * (v + kGeluA<T> * v * v * v)));
  }
}

template <typename T>
void gelu_backward(std::size_t n, const T* x, const T* dy, T* dx) {
#pragma omp parallel for simd schedule(static) if (n > kParallelWork)
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    const T v = x[i];
    const T t = vtanh(kGeluC<T> * (v + kGeluA<T> * v * v * v));
    const T dt = kGeluC<T> * (T(1) + T(3) * kGeluA<T> * v * v);
    dx[i] = dy[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * dt);
  }
}

namespace {

// Copies the columns of one head into a dense rows x hd block and back.
template <typename T>
void gather_head(std::size_t rows, std::size_t dim, std::size_t hd, std::size_t h, const T* src,
                 T* dst) {
  for (std::size_t i = 0; i < rows; ++i) std::copy_n(src + i * dim + h * hd, hd, dst + i * hd);
}

template <typename T>
void scatter_head(std::size_t rows, std::size_t dim, std::size_t hd, std::size_t h, const T* src,
                  T* dst, bool accumulate) {
  for (std::size_t i = 0; i < rows; ++i) {
    T* d = dst + i * dim + h * hd;
    const T* s = src + i * hd;
    if (accumulate) {
      for (std::size_t t = 0; t < hd; ++t) d[t] += s[t];
    } else {
      std::copy_n(s, hd, d);
    }
  }
}

}  // namespace

// Per head: scores = Q K^T (dense), masked softmax, ctx = P V. Blocked
// entries are zeroed before P V so they contribute exact zeros.
template <typename T>
void attention_forward(const AttentionShape& s, const T* q, const T* k, const T* v,
                       const std::uint8_t* mask, T* probs, T* ctx) {
  const std::size_t hd = s.dim / s.heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
#pragma omp parallel for schedule(static) if (s.q_rows * s.kv_rows * s.dim > kParallelWork)
  for (Index hh = 0; hh < static_cast<Index>(s.heads); ++hh) {
    const auto h = static_cast<std::size_t>(hh);
    std::vector<T> qh(s.q_rows * hd), kh(s.kv_rows * hd), vh(s.kv_rows * hd), ch(s.q_rows * hd);
    gather_head(s.q_rows, s.dim, hd, h, q, qh.data());
    gather_head(s.kv_rows, s.dim, hd, h, k, kh.data());
    gather_head(s.kv_rows, s.dim, hd, h, v, vh.data());
    T* ph = probs + h * s.q_rows * s.kv_rows;
    gemm_nt(s.q_rows, s.kv_rows, hd, qh.data(), kh.data(), ph);
    for (std::size_t i = 0; i < s.q_rows; ++i) {
      const std::uint8_t* mrow = mask + i * s.kv_rows;
      T* prow = ph + i * s.kv_rows;
      T mx = -std::numeric_limits<T>::infinity();
#pragma omp simd reduction(max : mx)
      for (std::size_t j = 0; j < s.kv_rows; ++j) {
        mx = std::max(mx, mrow[j] ? prow[j] * scale : -std::numeric_limits<T>::infinity());
      }
#pragma omp simd
      for (std::size_t j = 0; j < s.kv_rows; ++j) {
        prow[j] = vexp(prow[j] * scale - mx) * static_cast<T>(mrow[j] != 0);
      }
      T sum = 0;
#pragma omp simd reduction(+ : sum)
      for (std::size_t j = 0; j < s.kv_rows; ++j) sum += prow[j];
      const T inv = sum > 0 ? T(1) / sum : T(0);
#pragma omp simd
      for (std::size_t j = 0; j < s.kv_rows; ++j) prow[j] *= inv;
    }
    gemm_nn(s.q_rows, hd, s.kv_rows, ph, vh.data(), ch.data());
    scatter_head(s.q_rows, s.dim, hd, h, ch.data(), ctx, false);
  }
}

template <typename T>
void attention_backward(const AttentionShape& s, const T* q, const T* k, const T* v,
                        const std::uint8_t* mask, const T* probs, const T* dctx, T* dq, T* dk,
                        T* dv) {
  const std::size_t hd = s.dim / s.heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  // Heads write disjoint column slices of dq/dk/dv.
#pragma omp parallel for schedule(static) if (s.q_rows * s.kv_rows * s.dim > kParallelWork)
  for (Index hh = 0; hh < static_cast<Index>(s.heads); ++hh) {
    const auto h = static_cast<std::size_t>(hh);
    std::vector<T> qh(s.q_rows * hd), kh(s.kv_rows * hd), vh(s.kv_rows * hd), gh(s.q_rows * hd);
    gather_head(s.q_rows, s.dim, hd, h, q, qh.data());
    gather_head(s.kv_rows, s.dim, hd, h, k, kh.data());
    gather_head(s.kv_rows, s.dim, hd, h, v, vh.data());
    gather_head(s.q_rows, s.dim, hd, h, dctx, gh.data());
    const T* ph = probs + h * s.q_rows * s.kv_rows;

    std::vector<T> ds(s.q_rows * s.kv_rows);
    gemm_nt(s.q_rows, s.kv_rows, hd, gh.data(), vh.data(), ds.data());
    for (std::size_t i = 0; i < s.q_rows; ++i) {
      const T* prow = ph + i * s.kv_rows;
      T* drow = ds.data() + i * s.kv_rows;
      T weighted = 0;
#pragma omp simd reduction(+ : weighted)
      for (std::size_t j = 0; j < s.kv_rows; ++j) weighted += prow[j] * drow[j];
#pragma omp simd
      for (std::size_t j = 0; j < s.kv_rows; ++j) {
        drow[j] = mask[i * s.kv_rows + j] ? prow[j] * (drow[j] - weighted) * scale : T(0);
      }
    }
    std::vector<T> out_q(s.q_rows * hd), out_k(s.kv_rows * hd), out_v(s.kv_rows * hd);
    gemm_nn(s.q_rows, hd, s.kv_rows, ds.data(), kh.data(), out_q.data());
    gemm_tn(s.kv_rows, hd, s.q_rows, ds.data(), qh.data(), out_k.data());
    gemm_tn(s.kv_rows, hd, s.q_rows, ph, gh.data(), out_v.data());
    scatter_head(s.q_rows, s.dim, hd, h, out_q.data(), dq, false);
    scatter_head(s.kv_rows, s.dim, hd, h, out_k.data(), dk, true);
    scatter_head(s.kv_rows, s.dim, hd, h, out_v.data(), dv, true);
  }
}

#define A3_INSTANTIATE(T)                                                                    \
  template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*,  \
                           bool);                                                          \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*,  \
                           bool);                                                          \
  template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*,  \
                           bool);                                                          \
  template void layernorm_forward<T>(std::size_t, std::size_t, const T*, const T*, const T*, \
                                     T*, T*, T*);                                          \
  template void layernorm_backward<T>(std::size_t, std::size_t, const T*, const T*,         \
                                      const T*, const T*, const T*, T*, T*, T*);            \
  template void gelu_forward<T>(std::size_t, const T*, T*);                                 \
  template void gelu_backward<T>(std::size_t, const T*, const T*, T*);                      \
  template void attention_forward<T>(const AttentionShape&, const T*, const T*, const T*,   \
                                     const std::uint8_t*, T*, T*);                          \
  template void attention_backward<T>(const AttentionShape&, const T*, const T*, const T*,  \
                                      const std::uint8_t*, const T*, const T*, T*, T*, T*);

A3_INSTANTIATE(float)
A3_INSTANTIATE(double)
#undef A3_INSTANTIATE

}  // namespace kernels
}  // namespace a3
