#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "normadapt/norm_math.hpp"
#include "normadapt/ops.hpp"

using namespace normadapt;
using namespace normadapt::norm_math;

namespace {

std::vector<double> draw(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

// Oracle: W1 built as an explicit dense matrix.
std::vector<double> dense_w1(const NormInstance& inst) {
  const std::size_t n = inst.size();
  std::vector<double> w(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      w[i * n + j] = (i == j ? 1.0 : 0.0) - (inst.y[i] * inst.y[j] + 1.0) / static_cast<double>(n);
    }
  }
  return w;
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

TEST_CASE("ln_stats on small inputs") {
  const std::vector<double> two{1.0, 3.0};
  auto a = ln_stats(two);
  CHECK(a.mu == 2.0);
  CHECK(a.sigma == 1.0);
  CHECK(a.y == std::vector<double>{-1.0, 1.0});

  const std::vector<double> four{0.0, 1.0, 2.0, 3.0};
  auto b = ln_stats(four);
  CHECK(b.mu == 1.5);
  CHECK(b.sigma == doctest::Approx(std::sqrt(1.25)).epsilon(1e-15));
  const double expect[] = {-1.3416407864998738, -0.4472135954999579, 0.4472135954999579, 1.3416407864998738};
  for (int i = 0; i < 4; ++i) CHECK(std::abs(b.y[i] - expect[i]) < 1e-12);

  const std::vector<double> flat{2.5, 2.5, 2.5};
  CHECK_THROWS_AS(ln_stats(flat), DegenerateSigmaError);
  const std::vector<double> one{1.0};
  CHECK_THROWS_AS(ln_stats(one), ShapeError);
}

TEST_CASE("normalized vector has zero mean and unit variance") {
  std::mt19937_64 rng(1);
  for (std::size_t n : {2, 3, 17, 256, 1000}) {
    auto inst = ln_stats(draw(n, rng, 3.0));
    double m = 0.0, v = 0.0;
    for (double y : inst.y) m += y;
    m /= static_cast<double>(n);
    for (double y : inst.y) v += (y - m) * (y - m);
    v /= static_cast<double>(n);
    CHECK(std::abs(m) <= 1e-12);
    CHECK(std::abs(v - 1.0) <= 1e-12);
  }
}

TEST_CASE("dimension two backward is identically zero") {
  auto inst = ln_stats(std::vector<double>{1.0, 3.0});
  auto a = ln_backward_closed_form(inst, std::vector<double>{0.7, -4.2});
  CHECK(max_abs(a) <= 1e-15);
}

TEST_CASE("closed form matches autodiff layer_norm and finite differences") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = 8;
    auto x = draw(n, rng, 2.0);
    auto b = draw(n, rng);
    auto inst = ln_stats(x);
    auto a = ln_backward_closed_form(inst, b);

    Tape<double> tape;
    Tensor<double> xt({1, n}, x, true);
    auto gain = Tensor<double>::full({n}, 1.0);
    auto bias = Tensor<double>::zeros({n});
    auto y = ops::layer_norm(tape, xt, gain, bias, 0.0);
    auto loss = ops::sum(tape, ops::mul(tape, y, Tensor<double>({1, n}, b)));
    tape.backward(loss);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(xt.grad().data()[i] - a[i]) <= 1e-10);

    // loss(x) = <b, y(x)>
    auto loss_at = [&](const std::vector<double>& xv) {
      auto s = ln_stats(xv);
      double l = 0.0;
      for (std::size_t i = 0; i < n; ++i) l += b[i] * s.y[i];
      return l;
    };
    const double h = 1e-6;
    for (std::size_t i = 0; i < n; ++i) {
      auto xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      const double fd = (loss_at(xp) - loss_at(xm)) / (2 * h);
      CHECK(std::abs(fd - a[i]) <= 1e-6);
    }
  }
}

TEST_CASE("backward output has zero mean") {
  std::mt19937_64 rng(3);
  for (std::size_t n : {3, 10, 100, 1000}) {
    auto inst = ln_stats(draw(n, rng));
    auto a = ln_backward_closed_form(inst, draw(n, rng, 5.0));
    double m = 0.0;
    for (double v : a) m += v;
    m /= static_cast<double>(n);
    CHECK(std::abs(m) <= 1e-12 * max_abs(a));
  }
  auto inst = ln_stats(std::vector<double>{1, 2, 4});
  CHECK_THROWS_AS(ln_backward_closed_form(inst, std::vector<double>{1, 2}), ShapeError);
}

TEST_CASE("projection diagnostics against the dense oracle") {
  std::mt19937_64 rng(4);
  auto inst = ln_stats(draw(16, rng));
  const auto w = dense_w1(inst);
  const std::size_t n = 16;
  double idem = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += w[i * n + k] * w[k * n + j];
      idem = std::max(idem, std::abs(s - w[i * n + j]));
    }
  }
  CHECK(idem <= 1e-10);
  auto d = check_projection(inst);
  CHECK(d.idempotency_defect <= 1e-10);
  CHECK(std::abs(d.idempotency_defect - idem) <= 1e-14);
  CHECK(d.symmetry_defect <= 1e-15);
  CHECK(d.ones_residual <= 1e-12);
  CHECK(d.y_residual <= 1e-12);

  // Matrix-free application equals the dense product.
  auto v = draw(n, rng);
  auto fast = apply_w1(inst, v);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += w[i * n + k] * v[k];
    CHECK(std::abs(s - fast[i]) <= 1e-13);
  }
}

TEST_CASE("idempotency across N") {
  std::mt19937_64 rng(5);
  for (std::size_t n = 3; n <= 512; n += (n < 40 ? 1 : 37)) {
    auto d = check_projection(ln_stats(draw(n, rng)));
    CHECK(d.idempotency_defect <= 1e-10);
  }
}

TEST_CASE("bound kernel cases") {
  std::mt19937_64 rng(6);
  auto inst = ln_stats(draw(32, rng));
  auto constant = ln_backward_closed_form(inst, std::vector<double>(32, 4.5));
  CHECK(max_abs(constant) <= 1e-14);
  std::vector<double> along_y(32);
  for (std::size_t i = 0; i < 32; ++i) along_y[i] = inst.y[i] / inst.sigma;
  CHECK(max_abs(ln_backward_closed_form(inst, along_y)) <= 1e-13);
}

TEST_CASE("sigma-scaled contraction over random draws") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (std::size_t n : {8, 64, 512}) {
    int violations = 0;
    for (int t = 0; t < 1000; ++t) {
      auto inst = ln_stats(draw(n, rng, scale(rng)));
      auto r = variance_bound_check(inst, draw(n, rng, scale(rng)));
      if (!r.holds) ++violations;
      CHECK(r.d_a * inst.sigma * inst.sigma <= r.d_b * (1 + 1e-10));
    }
    CHECK(violations == 0);
  }
}

TEST_CASE("scaling study") {
  const std::vector<std::size_t> grid{16, 64, 256, 1024};
  auto pooled = variance_scaling_study(grid, Sampler::mean_pooled, 200, 11);
  CHECK(pooled.strictly_decreasing);
  CHECK(pooled.loglog_slope < 0.0);

  // Single-N run reproduces the same row.
  const std::vector<std::size_t> just{256};
  auto single = variance_scaling_study(just, Sampler::mean_pooled, 200, 11);
  CHECK(single.rows[0].variance == pooled.rows[2].variance);
  CHECK(variance_scaling_study(just, Sampler::mean_pooled, 200, 11).rows[0].variance == single.rows[0].variance);

  auto kernel = variance_scaling_study(grid, Sampler::y_only, 50, 3);
  for (const auto& r : kernel.rows) CHECK(r.variance <= 1e-28);

  // With unscaled iid upstream gradients the variance does not shrink.
  auto iid = variance_scaling_study(grid, Sampler::iid, 200, 11);
  CHECK_FALSE(iid.strictly_decreasing);

  const std::vector<std::size_t> bad{64, 16};
  CHECK_THROWS_AS(variance_scaling_study(bad, Sampler::iid, 10, 1), ConfigError);
  CHECK(sampler_from_name(sampler_name(Sampler::mean_pooled)) == Sampler::mean_pooled);
}
