// Serial reference kernels against the OpenMP kernels.
// Thread count follows NORMADAPT_THREADS; run with several values to compare.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "normadapt/kernels.hpp"

using namespace normadapt;

namespace {

double best_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm-up
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

std::vector<float> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

void report(const char* name, double serial, double parallel, double max_diff) {
  std::printf("%-22s serial %9.3f ms   parallel %9.3f ms   speedup %5.2fx   max|diff| %.2e\n", name, serial,
              parallel, serial / parallel, max_diff);
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<double>(std::abs(a[i] - b[i])));
  return m;
}

}  // namespace

int main() {
  const int threads = kernels::configure_threads_from_env();
  std::printf("threads: %d\n", threads);
  std::mt19937_64 rng(1);
  const int reps = 5;

  for (std::size_t n : {128, 256, 512}) {
    const auto a = random_vec(n * n, rng), b = random_vec(n * n, rng);
    std::vector<float> c1(n * n), c2(n * n);
    const double s = best_ms([&] { kernels::reference::gemm(1, n, n, n, a.data(), 0, b.data(), 0, c1.data(), 0, false); }, reps);
    const double p = best_ms([&] { kernels::gemm(1, n, n, n, a.data(), 0, b.data(), 0, c2.data(), 0, false); }, reps);
    char name[32];
    std::snprintf(name, sizeof name, "gemm %zux%zu", n, n);
    report(name, s, p, max_abs_diff(c1, c2));
  }

  {
    const std::size_t rows = 4096, cols = 128;
    const auto x = random_vec(rows * cols, rng);
    std::vector<float> y1(rows * cols), y2(rows * cols);
    const double s = best_ms([&] { kernels::reference::softmax_rows(rows, cols, x.data(), y1.data(), 0.125f, true); }, reps);
    const double p = best_ms([&] { kernels::softmax_rows(rows, cols, x.data(), y2.data(), 0.125f, true); }, reps);
    report("softmax 4096x128", s, p, max_abs_diff(y1, y2));
  }

  {
    const std::size_t rows = 8192, cols = 256;
    const auto x = random_vec(rows * cols, rng);
    const std::vector<float> gain(cols, 1.0f), bias(cols, 0.0f);
    std::vector<float> y1(rows * cols), y2(rows * cols), m(rows), r(rows);
    const double s = best_ms(
        [&] { kernels::reference::layer_norm_rows(rows, cols, x.data(), gain.data(), bias.data(), y1.data(), m.data(), r.data(), 1e-5f); },
        reps);
    const double p = best_ms(
        [&] { kernels::layer_norm_rows(rows, cols, x.data(), gain.data(), bias.data(), y2.data(), m.data(), r.data(), 1e-5f); },
        reps);
    report("layer_norm 8192x256", s, p, max_abs_diff(y1, y2));
  }
  return 0;
}
