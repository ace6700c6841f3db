#include "normadapt/norm_math.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "normadapt/error.hpp"

namespace normadapt::norm_math {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double mean_of(std::span<const double> a) {
  return std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
}

void check_length(const NormInstance& inst, std::size_t n, const char* what) {
  if (n != inst.size()) {
    throw ShapeError(std::string(what) + ": length " + std::to_string(n) + " does not match N = " +
                     std::to_string(inst.size()));
  }
}

}  // namespace

NormInstance ln_stats(std::span<const double> x) {
  if (x.size() < 2) throw ShapeError("ln_stats: need N >= 2, got " + std::to_string(x.size()));
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  if (*lo == *hi) throw DegenerateSigmaError("ln_stats: constant input has sigma = 0");

  NormInstance inst;
  inst.x.assign(x.begin(), x.end());
  inst.mu = mean_of(x);
  double ss = 0.0;
  for (double v : x) ss += (v - inst.mu) * (v - inst.mu);
  inst.sigma = std::sqrt(ss / static_cast<double>(x.size()));
  if (!(inst.sigma > 0.0)) throw DegenerateSigmaError("ln_stats: sigma underflowed to 0");
  inst.y.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) inst.y[i] = (x[i] - inst.mu) / inst.sigma;
  return inst;
}

std::vector<double> apply_w1(const NormInstance& inst, std::span<const double> v) {
  check_length(inst, v.size(), "apply_w1");
  const double n = static_cast<double>(inst.size());
  const double vy = dot(inst.y, v) / n;
  const double v1 = std::accumulate(v.begin(), v.end(), 0.0) / n;
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - inst.y[i] * vy - v1;
  return out;
}

std::vector<double> ln_backward_closed_form(const NormInstance& inst, std::span<const double> b) {
  check_length(inst, b.size(), "ln_backward_closed_form");
  auto a = apply_w1(inst, b);
  for (double& v : a) v /= inst.sigma;
  return a;
}

ProjectionDiagnostics check_projection(const NormInstance& inst) {
  const std::size_t n = inst.size();
  ProjectionDiagnostics d;
  d.n = n;
  // Column j of W1 is W1 e_j; column j of W1^2 is W1 applied to that.
  std::vector<std::vector<double>> cols(n);
  std::vector<double> e(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    cols[j] = apply_w1(inst, e);
    e[j] = 0.0;
    const auto sq = apply_w1(inst, cols[j]);
    for (std::size_t i = 0; i < n; ++i) {
      d.idempotency_defect = std::max(d.idempotency_defect, std::abs(sq[i] - cols[j][i]));
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      d.symmetry_defect = std::max(d.symmetry_defect, std::abs(cols[j][i] - cols[i][j]));
    }
  }
  const std::vector<double> ones(n, 1.0);
  d.ones_residual = norm2(apply_w1(inst, ones));
  d.y_residual = norm2(apply_w1(inst, inst.y));
  return d;
}

BoundRecord variance_bound_check(const NormInstance& inst, std::span<const double> b, double tol) {
  const auto a = ln_backward_closed_form(inst, b);
  const double n = static_cast<double>(inst.size());
  BoundRecord r;
  r.mean_a = mean_of(a);
  r.dot_a_ones = std::accumulate(a.begin(), a.end(), 0.0);
  r.dot_a_y = dot(a, inst.y);
  r.norm_a = norm2(a);
  const double b_bar = mean_of(b);
  for (std::size_t i = 0; i < a.size(); ++i) {
    r.d_a += (a[i] - r.mean_a) * (a[i] - r.mean_a);
    r.centered_norm_b_sq += (b[i] - b_bar) * (b[i] - b_bar);
  }
  r.d_a /= n;
  r.d_b = r.centered_norm_b_sq / n;
  r.scaled_norm_a_sq = inst.sigma * inst.sigma * r.norm_a * r.norm_a;

  // Orthogonality residuals are measured against the scale of the vectors involved.
  const double scale_1 = r.norm_a * std::sqrt(n);
  const double slack = tol * std::max(scale_1, 1e-300);
  const bool orthogonal = std::abs(r.dot_a_ones) <= slack && std::abs(r.dot_a_y) <= slack;
  const bool contraction = r.scaled_norm_a_sq <= r.centered_norm_b_sq * (1.0 + tol) + 1e-300;
  r.holds = orthogonal && contraction;
  return r;
}

std::string_view sampler_name(Sampler s) {
  switch (s) {
    case Sampler::iid: return "iid";
    case Sampler::mean_pooled: return "mean-pooled";
    case Sampler::y_only: return "y-only";
  }
  return "unknown";
}

Sampler sampler_from_name(std::string_view name) {
  if (name == "iid") return Sampler::iid;
  if (name == "mean-pooled") return Sampler::mean_pooled;
  if (name == "y-only") return Sampler::y_only;
  throw ConfigError("unknown sampler '" + std::string(name) + "' (expected iid, mean-pooled or y-only)");
}

ScalingStudy variance_scaling_study(std::span<const std::size_t> n_grid, Sampler sampler,
                                    std::size_t trials, std::uint64_t seed) {
  if (trials == 0) throw ConfigError("variance_scaling_study: trials must be positive");
  for (std::size_t i = 0; i < n_grid.size(); ++i) {
    if (n_grid[i] < 3) throw ConfigError("variance_scaling_study: N must be >= 3");
    if (i > 0 && n_grid[i] <= n_grid[i - 1]) throw ConfigError("variance_scaling_study: N_grid must ascend");
  }
  ScalingStudy study;
  study.sampler = sampler;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t gi = 0; gi < n_grid.size(); ++gi) {
    const std::size_t n = n_grid[gi];
    // Each N gets its own stream so a single-N run matches the same row of a grid run.
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (n + 1)));
    std::vector<double> per_trial(trials);
    std::vector<double> x(n), b(n);
    for (std::size_t t = 0; t < trials; ++t) {
      for (double& v : x) v = normal(rng);
      const auto inst = ln_stats(x);
      switch (sampler) {
        case Sampler::iid:
          for (double& v : b) v = normal(rng);
          break;
        case Sampler::mean_pooled:
          for (double& v : b) v = normal(rng) / static_cast<double>(n);
          break;
        case Sampler::y_only: {
          const double c = normal(rng);
          for (std::size_t i = 0; i < n; ++i) b[i] = c * inst.y[i];
          break;
        }
      }
      const auto a = ln_backward_closed_form(inst, b);
      double ms = 0.0;
      for (double v : a) ms += v * v;
      per_trial[t] = ms / static_cast<double>(n);
    }
    std::sort(per_trial.begin(), per_trial.end());
    const double med = trials % 2 ? per_trial[trials / 2]
                                  : 0.5 * (per_trial[trials / 2 - 1] + per_trial[trials / 2]);
    study.rows.push_back({n, med});
  }

  study.strictly_decreasing = study.rows.size() >= 2;
  for (std::size_t i = 1; i < study.rows.size(); ++i) {
    study.strictly_decreasing = study.strictly_decreasing && study.rows[i].variance < study.rows[i - 1].variance;
  }
  // Slope is undefined when any variance is zero (y-only sampler).
  bool positive = study.rows.size() >= 2;
  for (const auto& r : study.rows) positive = positive && r.variance > 0.0;
  if (positive) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double m = static_cast<double>(study.rows.size());
    for (const auto& r : study.rows) {
      const double lx = std::log(static_cast<double>(r.n)), ly = std::log(r.variance);
      sx += lx;
      sy += ly;
      sxx += lx * lx;
      sxy += lx * ly;
    }
    study.loglog_slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  } else {
    study.loglog_slope = std::nan("");
  }
  return study;
}

}  // namespace normadapt::norm_math
