#pragma once

#include <cstddef>
#include <span>

#include "normadapt/tensor.hpp"

// Row-parallel numeric kernels used by the ops layer.
//
// Every parallel kernel partitions work over independent output rows (or
// columns, for reductions), and each output element is produced by the same
// serial inner loop whatever the thread count. Results are therefore
// bitwise identical across NORMADAPT_THREADS settings.
//
// The `reference` namespace holds plain serial versions kept for testing
// and benchmarking. They use the textbook loop order and so agree with the
// parallel kernels only up to round-off.
namespace normadapt::kernels {

void set_num_threads(int n);
int num_threads();
// Applies NORMADAPT_THREADS when set; returns the resulting thread count.
int configure_threads_from_env();

/// C[b] (+)= A[b] * B[b] for `batch` row-major matrices, A: M x K, B: K x N.
/// A stride of 0 broadcasts the same matrix over the batch.
template <Scalar T>
void gemm(std::size_t batch, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t stride_a, const T* b, std::size_t stride_b, T* c, std::size_t stride_c,
          bool accumulate);

/// out[b] = in[b]^T for `batch` rows x cols matrices.
template <Scalar T>
void transpose2d(std::size_t batch, std::size_t rows, std::size_t cols, const T* in, T* out);

/// Row softmax of scale * x. With `causal`, rows are grouped into square
/// blocks of width `cols` and entry j of row i (i taken mod cols) is masked
/// when j > i.
template <Scalar T>
void softmax_rows(std::size_t rows, std::size_t cols, const T* x, T* y, T scale, bool causal);

template <Scalar T>
void softmax_rows_backward(std::size_t rows, std::size_t cols, const T* y, const T* dy, T* dx,
                           T scale);

/// Normalizes each row; writes mean and 1/sigma per row. Throws
/// DegenerateSigmaError on a zero-variance row when eps == 0.
template <Scalar T>
void layer_norm_rows(std::size_t rows, std::size_t cols, const T* x, const T* gain,
                     const T* bias, T* y, T* mean, T* rstd, T eps);

/// dx for y = gain * xhat + bias, accumulated into dx.
template <Scalar T>
void layer_norm_rows_backward_input(std::size_t rows, std::size_t cols, const T* x,
                                    const T* gain, const T* mean, const T* rstd, const T* dy,
                                    T* dx);

/// Column reductions: dgain += sum_r dy*xhat, dbias += sum_r dy (either may be null).
template <Scalar T>
void layer_norm_rows_backward_params(std::size_t rows, std::size_t cols, const T* x,
                                     const T* mean, const T* rstd, const T* dy, T* dgain,
                                     T* dbias);

namespace reference {

template <Scalar T>
void gemm(std::size_t batch, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t stride_a, const T* b, std::size_t stride_b, T* c, std::size_t stride_c,
          bool accumulate);

template <Scalar T>
void softmax_rows(std::size_t rows, std::size_t cols, const T* x, T* y, T scale, bool causal);

template <Scalar T>
void layer_norm_rows(std::size_t rows, std::size_t cols, const T* x, const T* gain,
                     const T* bias, T* y, T* mean, T* rstd, T eps);

}  // namespace reference

}  // namespace normadapt::kernels
