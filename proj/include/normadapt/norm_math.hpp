#pragma once

// Exact (epsilon-free) layer normalization algebra in float64.

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace normadapt::norm_math {

struct NormInstance {
  std::vector<double> x;
  double mu = 0.0;
  double sigma = 0.0;  // population, divisor N
  std::vector<double> y;

  std::size_t size() const { return x.size(); }
};

/// Throws DegenerateSigmaError for constant input and ShapeError for N < 2.
NormInstance ln_stats(std::span<const double> x);

/// a = (1/sigma) W1 b, with W1 = I - (y y^T + 1 1^T) / N applied matrix-free.
std::vector<double> ln_backward_closed_form(const NormInstance& inst, std::span<const double> b);

/// W1 v for the instance's y.
std::vector<double> apply_w1(const NormInstance& inst, std::span<const double> v);

struct ProjectionDiagnostics {
  std::size_t n = 0;
  double idempotency_defect = 0.0;  // max |W1^2 - W1|
  double symmetry_defect = 0.0;     // max |W1 - W1^T|
  double ones_residual = 0.0;       // ||W1 1||
  double y_residual = 0.0;          // ||W1 y||
};

ProjectionDiagnostics check_projection(const NormInstance& inst);

struct BoundRecord {
  double mean_a = 0.0;
  double dot_a_ones = 0.0;
  double dot_a_y = 0.0;
  double norm_a = 0.0;
  double scaled_norm_a_sq = 0.0;   // ||sigma a||^2
  double centered_norm_b_sq = 0.0; // ||b - mean(b) 1||^2
  double d_a = 0.0;                // sum (a_i - mean a)^2 / N
  double d_b = 0.0;                // sum (b_i - mean b)^2 / N
  bool holds = false;
};

/// Checks zero mean, orthogonality to 1 and y, and ||sigma a|| <= ||b - b_bar 1||.
/// `tol` is the relative slack allowed for round-off.
BoundRecord variance_bound_check(const NormInstance& inst, std::span<const double> b, double tol = 1e-10);

// How (x, b) pairs are drawn for the scaling study.
//   iid:         x_i, g_i ~ N(0,1), b = g. Informational: Var(a) does not shrink.
//   mean_pooled: b = g / N, the gradient of a loss that averages over features.
//   y_only:      b = c * y, lies in the kernel of W1.
enum class Sampler { iid, mean_pooled, y_only };

std::string_view sampler_name(Sampler s);
Sampler sampler_from_name(std::string_view name);

struct ScalingRow {
  std::size_t n = 0;
  double variance = 0.0;  // median over trials of mean_i a_i^2
};

struct ScalingStudy {
  Sampler sampler = Sampler::mean_pooled;
  std::vector<ScalingRow> rows;
  double loglog_slope = 0.0;  // least squares fit of log Var against log N
  bool strictly_decreasing = false;
};

ScalingStudy variance_scaling_study(std::span<const std::size_t> n_grid, Sampler sampler,
                                    std::size_t trials, std::uint64_t seed);

}  // namespace normadapt::norm_math
