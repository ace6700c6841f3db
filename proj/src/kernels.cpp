#include "normadapt/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#ifdef _OPENMP
#define NA_PARALLEL_FOR _Pragma("omp parallel for schedule(static)")
#else
#define NA_PARALLEL_FOR
#endif

namespace normadapt::kernels {

namespace {

using Index = std::ptrdiff_t;

int g_threads = 0;  // 0: OpenMP default

}  // namespace

void set_num_threads(int n) {
  g_threads = n > 0 ? n : 0;
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#endif
}

int num_threads() {
#ifdef _OPENMP
  return g_threads > 0 ? g_threads : omp_get_max_threads();
#else
  return 1;
#endif
}

int configure_threads_from_env() {
  if (const char* env = std::getenv("NORMADAPT_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) set_num_threads(static_cast<int>(v));
  }
  return num_threads();
}

template <Scalar T>
void gemm(std::size_t batch, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t stride_a, const T* b, std::size_t stride_b, T* c, std::size_t stride_c,
          bool accumulate) {
  const Index rows = static_cast<Index>(batch * m);
  NA_PARALLEL_FOR
  for (Index r = 0; r < rows; ++r) {
    const std::size_t bi = static_cast<std::size_t>(r) / m;
    const std::size_t i = static_cast<std::size_t>(r) % m;
    const T* arow = a + bi * stride_a + i * k;
    const T* bmat = b + bi * stride_b;
    T* crow = c + bi * stride_c + i * n;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = T(0);
    }
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T aik = arow[kk];
      const T* brow = bmat + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

template <Scalar T>
void transpose2d(std::size_t batch, std::size_t rows, std::size_t cols, const T* in, T* out) {
  const Index total = static_cast<Index>(batch * rows);
  NA_PARALLEL_FOR
  for (Index r = 0; r < total; ++r) {
    const std::size_t bi = static_cast<std::size_t>(r) / rows;
    const std::size_t i = static_cast<std::size_t>(r) % rows;
    const T* src = in + bi * rows * cols + i * cols;
    T* dst = out + bi * rows * cols;
    for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[j];
  }
}

template <Scalar T>
void softmax_rows(std::size_t rows, std::size_t cols, const T* x, T* y, T scale, bool causal) {
  NA_PARALLEL_FOR
  for (Index r = 0; r < static_cast<Index>(rows); ++r) {
    const T* xr = x + r * cols;
    T* yr = y + r * cols;
    const std::size_t limit = causal ? (static_cast<std::size_t>(r) % cols) + 1 : cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < limit; ++j) mx = std::max(mx, scale * xr[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < limit; ++j) {
      yr[j] = std::exp(scale * xr[j] - mx);
      denom += yr[j];
    }
    const T inv = static_cast<T>(1.0 / denom);
    for (std::size_t j = 0; j < limit; ++j) yr[j] *= inv;
    for (std::size_t j = limit; j < cols; ++j) yr[j] = T(0);
  }
}

template <Scalar T>
void softmax_rows_backward(std::size_t rows, std::size_t cols, const T* y, const T* dy, T* dx,
                           T scale) {
  NA_PARALLEL_FOR
  for (Index r = 0; r < static_cast<Index>(rows); ++r) {
    const T* yr = y + r * cols;
    const T* gr = dy + r * cols;
    T* dr = dx + r * cols;
    double dot = 0.0;
    for (std::size_t j = 0; j < cols; ++j) dot += static_cast<double>(yr[j]) * gr[j];
    const T d = static_cast<T>(dot);
    for (std::size_t j = 0; j < cols; ++j) dr[j] += scale * yr[j] * (gr[j] - d);
  }
}

template <Scalar T>
void layer_norm_rows(std::size_t rows, std::size_t cols, const T* x, const T* gain,
                     const T* bias, T* y, T* mean, T* rstd, T eps) {
  bool degenerate = false;
  NA_PARALLEL_FOR
  for (Index r = 0; r < static_cast<Index>(rows); ++r) {
    const T* xr = x + r * cols;
    T* yr = y + r * cols;
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += xr[j];
    const double mu = s / static_cast<double>(cols);
    double v = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double d = xr[j] - mu;
      v += d * d;
    }
    v /= static_cast<double>(cols);
    if (v + eps <= 0.0) {
#ifdef _OPENMP
#pragma omp atomic write
#endif
      degenerate = true;
      continue;
    }
    const double inv = 1.0 / std::sqrt(v + static_cast<double>(eps));
    mean[r] = static_cast<T>(mu);
    rstd[r] = static_cast<T>(inv);
    for (std::size_t j = 0; j < cols; ++j) {
      const T xhat = static_cast<T>((xr[j] - mu) * inv);
      yr[j] = xhat * gain[j] + (bias ? bias[j] : T(0));
    }
  }
  if (degenerate) {
    throw DegenerateSigmaError("layer_norm: row has zero variance and epsilon is 0");
  }
}

template <Scalar T>
void layer_norm_rows_backward_input(std::size_t rows, std::size_t cols, const T* x,
                                    const T* gain, const T* mean, const T* rstd, const T* dy,
                                    T* dx) {
  NA_PARALLEL_FOR
  for (Index r = 0; r < static_cast<Index>(rows); ++r) {
    const T* xr = x + r * cols;
    const T* gr = dy + r * cols;
    T* dr = dx + r * cols;
    const T mu = mean[r];
    const T is = rstd[r];
    double mean_g = 0.0;
    double mean_gx = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double g = static_cast<double>(gr[j]) * gain[j];
      mean_g += g;
      mean_gx += g * (xr[j] - mu) * is;
    }
    mean_g /= static_cast<double>(cols);
    mean_gx /= static_cast<double>(cols);
    for (std::size_t j = 0; j < cols; ++j) {
      const double g = static_cast<double>(gr[j]) * gain[j];
      const double xhat = (static_cast<double>(xr[j]) - mu) * is;
      dr[j] += static_cast<T>(is * (g - mean_g - xhat * mean_gx));
    }
  }
}

template <Scalar T>
void layer_norm_rows_backward_params(std::size_t rows, std::size_t cols, const T* x,
                                     const T* mean, const T* rstd, const T* dy, T* dgain,
                                     T* dbias) {
  NA_PARALLEL_FOR
  for (Index j = 0; j < static_cast<Index>(cols); ++j) {
    double sg = 0.0;
    double sb = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double g = dy[r * cols + j];
      sg += g * (static_cast<double>(x[r * cols + j]) - mean[r]) * rstd[r];
      sb += g;
    }
    if (dgain) dgain[j] += static_cast<T>(sg);
    if (dbias) dbias[j] += static_cast<T>(sb);
  }
}

namespace reference {

template <Scalar T>
void gemm(std::size_t batch, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t stride_a, const T* b, std::size_t stride_b, T* c, std::size_t stride_c,
          bool accumulate) {
  for (std::size_t bi = 0; bi < batch; ++bi) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        T s = T(0);
        for (std::size_t kk = 0; kk < k; ++kk) {
          s += a[bi * stride_a + i * k + kk] * b[bi * stride_b + kk * n + j];
        }
        T& out = c[bi * stride_c + i * n + j];
        out = accumulate ? out + s : s;
      }
    }
  }
}

template <Scalar T>
void softmax_rows(std::size_t rows, std::size_t cols, const T* x, T* y, T scale, bool causal) {
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t limit = causal ? (r % cols) + 1 : cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < limit; ++j) mx = std::max(mx, scale * x[r * cols + j]);
    T denom = T(0);
    for (std::size_t j = 0; j < limit; ++j) denom += std::exp(scale * x[r * cols + j] - mx);
    for (std::size_t j = 0; j < cols; ++j) {
      y[r * cols + j] = j < limit ? std::exp(scale * x[r * cols + j] - mx) / denom : T(0);
    }
  }
}

template <Scalar T>
void layer_norm_rows(std::size_t rows, std::size_t cols, const T* x, const T* gain,
                     const T* bias, T* y, T* mean, T* rstd, T eps) {
  for (std::size_t r = 0; r < rows; ++r) {
    T mu = T(0);
    for (std::size_t j = 0; j < cols; ++j) mu += x[r * cols + j];
    mu /= static_cast<T>(cols);
    T var = T(0);
    for (std::size_t j = 0; j < cols; ++j) var += (x[r * cols + j] - mu) * (x[r * cols + j] - mu);
    var /= static_cast<T>(cols);
    if (var + eps <= T(0)) {
      throw DegenerateSigmaError("layer_norm: row " + std::to_string(r) +
                                 " has zero variance and epsilon is 0");
    }
    mean[r] = mu;
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < cols; ++j) {
      y[r * cols + j] = (x[r * cols + j] - mu) * rstd[r] * gain[j] + (bias ? bias[j] : T(0));
    }
  }
}

}  // namespace reference

#define NA_INSTANTIATE(T)                                                                        \
  template void gemm<T>(std::size_t, std::size_t, std::size_t, std::size_t, const T*,           \
                        std::size_t, const T*, std::size_t, T*, std::size_t, bool);              \
  template void transpose2d<T>(std::size_t, std::size_t, std::size_t, const T*, T*);            \
  template void softmax_rows<T>(std::size_t, std::size_t, const T*, T*, T, bool);               \
  template void softmax_rows_backward<T>(std::size_t, std::size_t, const T*, const T*, T*, T);  \
  template void layer_norm_rows<T>(std::size_t, std::size_t, const T*, const T*, const T*, T*,  \
                                   T*, T*, T);                                                   \
  template void layer_norm_rows_backward_input<T>(std::size_t, std::size_t, const T*, const T*, \
                                                  const T*, const T*, const T*, T*);             \
  template void layer_norm_rows_backward_params<T>(std::size_t, std::size_t, const T*,          \
                                                   const T*, const T*, const T*, T*, T*);        \
  template void reference::gemm<T>(std::size_t, std::size_t, std::size_t, std::size_t,          \
                                   const T*, std::size_t, const T*, std::size_t, T*,             \
                                   std::size_t, bool);                                           \
  template void reference::softmax_rows<T>(std::size_t, std::size_t, const T*, T*, T, bool);    \
  template void reference::layer_norm_rows<T>(std::size_t, std::size_t, const T*, const T*,     \
                                              const T*, T*, T*, T*, T);

NA_INSTANTIATE(float)
NA_INSTANTIATE(double)

#undef NA_INSTANTIATE

}  // namespace normadapt::kernels
