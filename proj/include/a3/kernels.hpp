#pragma once

#include <cstddef>
#include <cstdint>

// Dense kernels used by the two-stream network. All matrices are row-major
// and densely packed (leading dimension = column count).
//
// a3::kernels holds the OpenMP-parallel versions used in training and
// decoding. a3::reference holds plain serial loops that accumulate in double;
// they exist to check the parallel kernels and as the benchmark baseline.
// Both are instantiated for float and double.
//
// Parallel kernels split work so that every output element is produced by
// exactly one thread in a fixed order, so results do not depend on the
// thread count.

namespace a3 {

struct AttentionShape {
  std::size_t q_rows = 0;   // query rows
  std::size_t kv_rows = 0;  // key/value rows
  std::size_t dim = 0;      // model width (heads * head_dim)
  std::size_t heads = 1;
};

namespace kernels {

// C = A B (+ C when accumulate). A: m x k, B: k x n, C: m x n.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate = false);

// C = A B^T (+ C). A: m x k, B: n x k.
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate = false);

// C = A^T B (+ C). A: k x m, B: k x n.
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate = false);

// y = (x - mean) * rstd * gamma + beta per row; mean/rstd saved for backward.
template <typename T>
void layernorm_forward(std::size_t rows, std::size_t dim, const T* x, const T* gamma,
                       const T* beta, T* y, T* mean, T* rstd);

// dx += ..., dgamma += ..., dbeta += ...
template <typename T>
void layernorm_backward(std::size_t rows, std::size_t dim, const T* dy, const T* x,
                        const T* gamma, const T* mean, const T* rstd, T* dx, T* dgamma,
                        T* dbeta);

// tanh-approximated GELU.
template <typename T>
void gelu_forward(std::size_t n, const T* x, T* y);

// dx = dy * gelu'(x)
template <typename T>
void gelu_backward(std::size_t n, const T* x, const T* dy, T* dx);

// Masked multi-head scaled dot-product attention. mask is q_rows x kv_rows
// (nonzero = allowed); every row must allow at least one key. probs receives
// heads x q_rows x kv_rows softmax weights (blocked entries exactly 0).
template <typename T>
void attention_forward(const AttentionShape& s, const T* q, const T* k, const T* v,
                       const std::uint8_t* mask, T* probs, T* ctx);

// dq is overwritten; dk and dv are accumulated into.
template <typename T>
void attention_backward(const AttentionShape& s, const T* q, const T* k, const T* v,
                        const std::uint8_t* mask, const T* probs, const T* dctx, T* dq, T* dk,
                        T* dv);

}  // namespace kernels

namespace reference {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate = false);
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate = false);
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate = false);
template <typename T>
void layernorm_forward(std::size_t rows, std::size_t dim, const T* x, const T* gamma,
                       const T* beta, T* y, T* mean, T* rstd);
template <typename T>
void layernorm_backward(std::size_t rows, std::size_t dim, const T* dy, const T* x,
                        const T* gamma, const T* mean, const T* rstd, T* dx, T* dgamma,
                        T* dbeta);
template <typename T>
void gelu_forward(std::size_t n, const T* x, T* y);
template <typename T>
void gelu_backward(std::size_t n, const T* x, const T* dy, T* dx);
template <typename T>
void attention_forward(const AttentionShape& s, const T* q, const T* k, const T* v,
                       const std::uint8_t* mask, T* probs, T* ctx);
template <typename T>
void attention_backward(const AttentionShape& s, const T* q, const T* k, const T* v,
                        const std::uint8_t* mask, const T* probs, const T* dctx, T* dq, T* dk,
                        T* dv);

}  // namespace reference

// Number of OpenMP threads the parallel kernels will use.
int kernel_threads();

}  // namespace a3
