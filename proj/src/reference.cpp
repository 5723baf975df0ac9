// Serial reference kernels. Straight loops, double accumulators, no blocking.

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "a3/kernels.hpp"

namespace a3::reference {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = accumulate ? static_cast<double>(c[i * n + j]) : 0.0;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<double>(a[i * k + p]) * b[p * n + j];
      c[i * n + j] = static_cast<T>(s);
    }
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = accumulate ? static_cast<double>(c[i * n + j]) : 0.0;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<double>(a[i * k + p]) * b[j * k + p];
      c[i * n + j] = static_cast<T>(s);
    }
  }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = accumulate ? static_cast<double>(c[i * n + j]) : 0.0;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<double>(a[p * m + i]) * b[p * n + j];
      c[i * n + j] = static_cast<T>(s);
    }
  }
}

template <typename T>
void layernorm_forward(std::size_t rows, std::size_t dim, const T* x, const T* gamma,
                       const T* beta, T* y, T* mean, T* rstd) {
  for (std::size_t i = 0; i < rows; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < dim; ++j) mu += x[i * dim + j];
    mu /= static_cast<double>(dim);
    double var = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = x[i * dim + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(dim);
    const double rs = 1.0 / std::sqrt(var + 1e-5);
    for (std::size_t j = 0; j < dim; ++j) {
      y[i * dim + j] = static_cast<T>((x[i * dim + j] - mu) * rs * gamma[j] + beta[j]);
    }
    mean[i] = static_cast<T>(mu);
    rstd[i] = static_cast<T>(rs);
  }
}

template <typename T>
void layernorm_backward(std::size_t rows, std::size_t dim, const T* dy, const T* x,
                        const T* gamma, const T* mean, const T* rstd, T* dx, T* dgamma,
                        T* dbeta) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double mu = mean[i], rs = rstd[i];
    double mean_g = 0.0, mean_gx = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double xhat = (x[i * dim + j] - mu) * rs;
      const double g = static_cast<double>(dy[i * dim + j]) * gamma[j];
      mean_g += g;
      mean_gx += g * xhat;
    }
    mean_g /= static_cast<double>(dim);
    mean_gx /= static_cast<double>(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      const double xhat = (x[i * dim + j] - mu) * rs;
      dx[i * dim + j] += static_cast<T>(rs * (static_cast<double>(dy[i * dim + j]) * gamma[j] -
                                              mean_g - xhat * mean_gx));
      dgamma[j] += static_cast<T>(dy[i * dim + j] * xhat);
      dbeta[j] += dy[i * dim + j];
    }
  }
}

template <typename T>
void gelu_forward(std::size_t n, const T* x, T* y) {
  const double c = std::sqrt(2.0 / 3.14159265358979323846);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i];
    y[i] = static_cast<T>(0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v))));
  }
}

template <typename T>
void gelu_backward(std::size_t n, const T* x, const T* dy, T* dx) {
  const double c = std::sqrt(2.0 / 3.14159265358979323846);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i];
    const double t = std::tanh(c * (v + 0.044715 * v * v * v));
    const double dt = c * (1.0 + 3.0 * 0.044715 * v * v);
    dx[i] = static_cast<T>(dy[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dt));
  }
}

template <typename T>
void attention_forward(const AttentionShape& s, const T* q, const T* k, const T* v,
                       const std::uint8_t* mask, T* probs, T* ctx) {
  const std::size_t hd = s.dim / s.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> score(s.kv_rows);
  for (std::size_t h = 0; h < s.heads; ++h) {
    for (std::size_t i = 0; i < s.q_rows; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.kv_rows; ++j) {
        if (!mask[i * s.kv_rows + j]) continue;
        double d = 0.0;
        for (std::size_t t = 0; t < hd; ++t) {
          d += static_cast<double>(q[i * s.dim + h * hd + t]) * k[j * s.dim + h * hd + t];
        }
        score[j] = d * scale;
        if (score[j] > mx) mx = score[j];
      }
      double sum = 0.0;
      for (std::size_t j = 0; j < s.kv_rows; ++j) {
        if (mask[i * s.kv_rows + j]) sum += std::exp(score[j] - mx);
      }
      T* prow = probs + (h * s.q_rows + i) * s.kv_rows;
      for (std::size_t j = 0; j < s.kv_rows; ++j) {
        prow[j] = mask[i * s.kv_rows + j] ? static_cast<T>(std::exp(score[j] - mx) / sum) : T(0);
      }
      for (std::size_t t = 0; t < hd; ++t) {
        double acc = 0.0;
        for (std::size_t j = 0; j < s.kv_rows; ++j) {
          if (!mask[i * s.kv_rows + j]) continue;
          acc += std::exp(score[j] - mx) / sum * v[j * s.dim + h * hd + t];
        }
        ctx[i * s.dim + h * hd + t] = static_cast<T>(acc);
      }
    }
  }
}

template <typename T>
void attention_backward(const AttentionShape& s, const T* q, const T* k, const T* v,
                        const std::uint8_t* mask, const T* probs, const T* dctx, T* dq, T* dk,
                        T* dv) {
  const std::size_t hd = s.dim / s.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<double> dp(s.kv_rows);
  for (std::size_t h = 0; h < s.heads; ++h) {
    for (std::size_t i = 0; i < s.q_rows; ++i) {
      const T* prow = probs + (h * s.q_rows + i) * s.kv_rows;
      double weighted = 0.0;
      for (std::size_t j = 0; j < s.kv_rows; ++j) {
        dp[j] = 0.0;
        if (!mask[i * s.kv_rows + j]) continue;
        for (std::size_t t = 0; t < hd; ++t) {
          dp[j] += static_cast<double>(dctx[i * s.dim + h * hd + t]) * v[j * s.dim + h * hd + t];
        }
        weighted += prow[j] * dp[j];
      }
      for (std::size_t t = 0; t < hd; ++t) {
        double acc = 0.0;
        for (std::size_t j = 0; j < s.kv_rows; ++j) {
          if (!mask[i * s.kv_rows + j]) continue;
          acc += prow[j] * (dp[j] - weighted) * scale * k[j * s.dim + h * hd + t];
        }
        dq[i * s.dim + h * hd + t] = static_cast<T>(acc);
      }
      for (std::size_t j = 0; j < s.kv_rows; ++j) {
        if (!mask[i * s.kv_rows + j]) continue;
        const double ds = prow[j] * (dp[j] - weighted) * scale;
        for (std::size_t t = 0; t < hd; ++t) {
          dk[j * s.dim + h * hd + t] += static_cast<T>(ds * q[i * s.dim + h * hd + t]);
          dv[j * s.dim + h * hd + t] += static_cast<T>(prow[j] * dctx[i * s.dim + h * hd + t]);
        }
      }
    }
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

}  // namespace a3::reference
