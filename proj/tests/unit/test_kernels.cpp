#include <cmath>
#include <vector>

#include "a3/kernels.hpp"
#include "a3/rng.hpp"
#include "doctest.h"

using namespace a3;

namespace {

template <typename T>
std::vector<T> noise(std::size_t n, Rng& rng) {
  std::vector<T> v(n);
  for (T& x : v) x = static_cast<T>(rng.normal());
  return v;
}

template <typename T>
double max_diff(const std::vector<T>& a, const std::vector<T>& b) {
  REQUIRE(a.size() == b.size());
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(double(a[i]) - double(b[i])));
  return d;
}

template <typename T>
double tol() {
  return sizeof(T) == 4 ? 2e-4 : 1e-10;
}

template <typename T>
void check_gemm(Rng& rng) {
  for (int t = 0; t < 20; ++t) {
    const auto m = static_cast<std::size_t>(rng.range(1, 70));
    const auto n = static_cast<std::size_t>(rng.range(1, 70));
    const auto k = static_cast<std::size_t>(rng.range(1, 70));
    const bool acc = rng.below(2) == 1;
    const auto a = noise<T>(m * k, rng), b = noise<T>(k * n, rng), bt = noise<T>(n * k, rng);
    const auto at = noise<T>(k * m, rng), c0 = noise<T>(m * n, rng);
    auto c1 = c0, c2 = c0;
    kernels::gemm_nn(m, n, k, a.data(), b.data(), c1.data(), acc);
    reference::gemm_nn(m, n, k, a.data(), b.data(), c2.data(), acc);
    CHECK(max_diff(c1, c2) < tol<T>() * double(k));
    c1 = c2 = c0;
    kernels::gemm_nt(m, n, k, a.data(), bt.data(), c1.data(), acc);
    reference::gemm_nt(m, n, k, a.data(), bt.data(), c2.data(), acc);
    CHECK(max_diff(c1, c2) < tol<T>() * double(k));
    c1 = c2 = c0;
    kernels::gemm_tn(m, n, k, at.data(), b.data(), c1.data(), acc);
    reference::gemm_tn(m, n, k, at.data(), b.data(), c2.data(), acc);
    CHECK(max_diff(c1, c2) < tol<T>() * double(k));
  }
}

template <typename T>
void check_pointwise(Rng& rng) {
  const std::size_t rows = 13, dim = 24;
  const auto x = noise<T>(rows * dim, rng), g = noise<T>(dim, rng), b = noise<T>(dim, rng);
  const auto dy = noise<T>(rows * dim, rng);
  std::vector<T> y1(rows * dim), y2(rows * dim), m1(rows), m2(rows), r1(rows), r2(rows);
  kernels::layernorm_forward(rows, dim, x.data(), g.data(), b.data(), y1.data(), m1.data(), r1.data());
  reference::layernorm_forward(rows, dim, x.data(), g.data(), b.data(), y2.data(), m2.data(), r2.data());
  CHECK(max_diff(y1, y2) < tol<T>());
  std::vector<T> dx1(rows * dim), dx2(rows * dim), dg1(dim), dg2(dim), db1(dim), db2(dim);
  kernels::layernorm_backward(rows, dim, dy.data(), x.data(), g.data(), m1.data(), r1.data(),
                              dx1.data(), dg1.data(), db1.data());
  reference::layernorm_backward(rows, dim, dy.data(), x.data(), g.data(), m2.data(), r2.data(),
                                dx2.data(), dg2.data(), db2.data());
  CHECK(max_diff(dx1, dx2) < tol<T>() * 10);
  CHECK(max_diff(dg1, dg2) < tol<T>() * 10);
  CHECK(max_diff(db1, db2) < tol<T>() * 10);

  std::vector<T> gy1(x.size()), gy2(x.size()), gd1(x.size()), gd2(x.size());
  kernels::gelu_forward(x.size(), x.data(), gy1.data());
  reference::gelu_forward(x.size(), x.data(), gy2.data());
  CHECK(max_diff(gy1, gy2) < tol<T>());
  kernels::gelu_backward(x.size(), x.data(), dy.data(), gd1.data());
  reference::gelu_backward(x.size(), x.data(), dy.data(), gd2.data());
  CHECK(max_diff(gd1, gd2) < tol<T>());
}

template <typename T>
void check_attention(Rng& rng) {
  for (int t = 0; t < 10; ++t) {
    AttentionShape s;
    s.q_rows = static_cast<std::size_t>(rng.range(1, 20));
    s.kv_rows = static_cast<std::size_t>(rng.range(1, 20));
    s.heads = static_cast<std::size_t>(rng.range(1, 4));
    s.dim = s.heads * static_cast<std::size_t>(rng.range(1, 8));
    std::vector<std::uint8_t> mask(s.q_rows * s.kv_rows);
    for (std::size_t i = 0; i < s.q_rows; ++i) {
      mask[i * s.kv_rows] = 1;
      for (std::size_t j = 1; j < s.kv_rows; ++j) mask[i * s.kv_rows + j] = rng.below(2) ? 1 : 0;
    }
    const auto q = noise<T>(s.q_rows * s.dim, rng), k = noise<T>(s.kv_rows * s.dim, rng);
    const auto v = noise<T>(s.kv_rows * s.dim, rng), dctx = noise<T>(s.q_rows * s.dim, rng);
    std::vector<T> p1(s.heads * s.q_rows * s.kv_rows), p2(p1.size());
    std::vector<T> c1(s.q_rows * s.dim), c2(c1.size());
    kernels::attention_forward(s, q.data(), k.data(), v.data(), mask.data(), p1.data(), c1.data());
    reference::attention_forward(s, q.data(), k.data(), v.data(), mask.data(), p2.data(), c2.data());
    CHECK(max_diff(p1, p2) < tol<T>());
    CHECK(max_diff(c1, c2) < tol<T>() * 10);
    for (std::size_t h = 0; h < s.heads; ++h) {
      for (std::size_t i = 0; i < s.q_rows; ++i) {
        double sum = 0;
        for (std::size_t j = 0; j < s.kv_rows; ++j) {
          const T pj = p1[(h * s.q_rows + i) * s.kv_rows + j];
          if (!mask[i * s.kv_rows + j]) CHECK(pj == T(0));
          sum += pj;
        }
        CHECK(std::abs(sum - 1) < 1e-5);
      }
    }
    std::vector<T> dq1(q.size()), dq2(q.size()), dk1(k.size()), dk2(k.size()), dv1(v.size()), dv2(v.size());
    kernels::attention_backward(s, q.data(), k.data(), v.data(), mask.data(), p1.data(), dctx.data(),
                                dq1.data(), dk1.data(), dv1.data());
    reference::attention_backward(s, q.data(), k.data(), v.data(), mask.data(), p2.data(), dctx.data(),
                                  dq2.data(), dk2.data(), dv2.data());
    CHECK(max_diff(dq1, dq2) < tol<T>() * 10);
    CHECK(max_diff(dk1, dk2) < tol<T>() * 10);
    CHECK(max_diff(dv1, dv2) < tol<T>() * 10);
  }
}

}  // namespace

TEST_CASE_TEMPLATE("parallel kernels match the serial reference", T, float, double) {
  Rng rng(21);
  check_gemm<T>(rng);
  check_pointwise<T>(rng);
  check_attention<T>(rng);
}

TEST_CASE("gemm reference on a hand example") {
  const double a[] = {1, 2, 3, 4};  // 2x2
  const double b[] = {5, 6, 7, 8};
  double c[4];
  reference::gemm_nn<double>(2, 2, 2, a, b, c);
  CHECK(c[0] == 19);
  CHECK(c[1] == 22);
  CHECK(c[2] == 43);
  CHECK(c[3] == 50);
  kernels::gemm_nn<double>(2, 2, 2, a, b, c);
  CHECK(c[3] == 50);
}
