#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "normadapt/kernels.hpp"

using namespace normadapt;

namespace {

std::vector<double> randn(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("parallel gemm agrees with the serial reference") {
  const std::size_t batch = 3, m = 17, n = 9, k = 13;
  auto a = randn(batch * m * k, 1);
  auto b = randn(batch * k * n, 2);
  std::vector<double> fast(batch * m * n, 0.5), slow(batch * m * n, 0.5);
  for (bool acc : {false, true}) {
    kernels::gemm(batch, m, n, k, a.data(), m * k, b.data(), k * n, fast.data(), m * n, acc);
    kernels::reference::gemm(batch, m, n, k, a.data(), m * k, b.data(), k * n, slow.data(), m * n, acc);
    CHECK(max_abs_diff(fast, slow) < 1e-12);
  }
}

TEST_CASE("gemm with a broadcast right operand") {
  const std::size_t batch = 2, m = 3, n = 4, k = 5;
  auto a = randn(batch * m * k, 3);
  auto b = randn(k * n, 4);
  std::vector<double> fast(batch * m * n), slow(batch * m * n);
  kernels::gemm(batch, m, n, k, a.data(), m * k, b.data(), 0, fast.data(), m * n, false);
  kernels::reference::gemm(batch, m, n, k, a.data(), m * k, b.data(), 0, slow.data(), m * n, false);
  CHECK(max_abs_diff(fast, slow) < 1e-12);
}

TEST_CASE("softmax kernel agrees with reference, causal and dense") {
  const std::size_t rows = 12, cols = 6;
  auto x = randn(rows * cols, 5);
  for (bool causal : {false, true}) {
    std::vector<double> fast(rows * cols), slow(rows * cols);
    kernels::softmax_rows(rows, cols, x.data(), fast.data(), 0.8, causal);
    kernels::reference::softmax_rows(rows, cols, x.data(), slow.data(), 0.8, causal);
    CHECK(max_abs_diff(fast, slow) < 1e-14);
    if (causal) CHECK(fast[1] == 0.0);  // row 0 sees only column 0
  }
}

TEST_CASE("layer_norm kernel agrees with reference") {
  const std::size_t rows = 7, cols = 10;
  auto x = randn(rows * cols, 6);
  auto g = randn(cols, 7);
  auto b = randn(cols, 8);
  std::vector<double> yf(rows * cols), ys(rows * cols), mf(rows), ms(rows), rf(rows), rs(rows);
  kernels::layer_norm_rows(rows, cols, x.data(), g.data(), b.data(), yf.data(), mf.data(), rf.data(), 1e-5);
  kernels::reference::layer_norm_rows(rows, cols, x.data(), g.data(), b.data(), ys.data(), ms.data(), rs.data(), 1e-5);
  CHECK(max_abs_diff(yf, ys) < 1e-12);
}

TEST_CASE("thread count does not change results") {
  const std::size_t m = 33, n = 31, k = 29;
  auto a = randn(m * k, 9);
  auto b = randn(k * n, 10);
  std::vector<double> one(m * n), many(m * n);
  kernels::set_num_threads(1);
  kernels::gemm<double>(1, m, n, k, a.data(), 0, b.data(), 0, one.data(), 0, false);
  kernels::set_num_threads(4);
  kernels::gemm<double>(1, m, n, k, a.data(), 0, b.data(), 0, many.data(), 0, false);
  kernels::set_num_threads(0);
  CHECK(one == many);
}
