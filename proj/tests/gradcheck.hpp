#pragma once

// Central finite-difference gradient oracle. Test-only: it evaluates the
// forward pass alone and never touches a backward rule.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "normadapt/ops.hpp"

namespace normadapt::testing {

using Fn64 = std::function<Tensor<double>(Tape<double>&, const std::vector<Tensor<double>>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Relative error of two gradient vectors: ||a - n|| / max(||a|| + ||n||, floor).
inline double relative_error(std::span<const double> a, std::span<const double> n,
                             double floor = 1e-8) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nn), floor);
}

// Projects fn's output on a fixed random direction so that every output
// element contributes to the scalar being differentiated.
inline GradCheckResult check_gradients(const Fn64& fn, std::vector<Tensor<double>> inputs,
                                       std::uint64_t seed, double step = 1e-5) {
  std::vector<double> direction;
  auto scalar_loss = [&](Tape<double>& tape, const std::vector<Tensor<double>>& in) {
    Tensor<double> out = fn(tape, in);
    if (direction.empty()) {
      std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
      std::normal_distribution<double> dist(0.0, 1.0);
      direction.resize(out.numel());
      for (double& v : direction) v = dist(rng);
    }
    Tensor<double> weights(out.shape(), direction);
    return ops::sum(tape, ops::mul(tape, out, weights));
  };

  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape<double> tape;
    tape.backward(scalar_loss(tape, inputs));
  }

  GradCheckResult result;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    std::vector<double> numeric(t.numel());
    auto data = t.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + step;
      Tape<double> t1;
      const double up = scalar_loss(t1, inputs).item();
      data[i] = saved - step;
      Tape<double> t2;
      const double down = scalar_loss(t2, inputs).item();
      data[i] = saved;
      numeric[i] = (up - down) / (2.0 * step);
    }
    result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic, numeric));
    ++result.checked;
  }
  return result;
}

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> data(numel(shape));
  for (double& v : data) v = dist(rng);
  return Tensor<double>(std::move(shape), std::move(data));
}

struct OpCase {
  const char* label;
  OpKind kind;
  std::function<std::vector<Tensor<double>>(std::mt19937_64&)> make_inputs;
  Attrs attrs;
};

// One or more randomized cases per registered op kind, ~8-element inputs.
inline std::vector<OpCase> op_cases() {
  using IntList = std::vector<std::int64_t>;
  auto pair = [](Shape a, Shape b) {
    return [a, b](std::mt19937_64& rng) {
      return std::vector<Tensor<double>>{random_tensor(a, rng), random_tensor(b, rng)};
    };
  };
  auto single = [](Shape a) {
    return [a](std::mt19937_64& rng) { return std::vector<Tensor<double>>{random_tensor(a, rng)}; };
  };
  return {
      {"matmul", OpKind::matmul, pair({2, 4}, {4, 2}), {}},
      {"matmul transpose_b", OpKind::matmul, pair({2, 4}, {2, 4}), {{"transpose_b", true}}},
      {"matmul batched", OpKind::matmul, pair({2, 2, 2}, {2, 2, 2}), {}},
      {"matmul shared weight", OpKind::matmul, pair({2, 2, 2}, {2, 3}), {}},
      {"add", OpKind::add, pair({2, 4}, {2, 4}), {}},
      {"add trailing", OpKind::add, pair({2, 4}, {4}), {}},
      {"mul", OpKind::mul, pair({2, 4}, {2, 4}), {}},
      {"mul trailing", OpKind::mul, pair({2, 4}, {4}), {}},
      {"embed_lookup", OpKind::embed_lookup, single({4, 2}), {{"ids", IntList{1, 3, 1, 0}}}},
      {"softmax", OpKind::softmax, single({2, 4}), {{"scale", 0.7}}},
      {"softmax causal", OpKind::softmax, single({2, 2, 2}), {{"causal", true}, {"scale", 1.3}}},
      {"silu", OpKind::silu, single({8}), {}},
      {"layer_norm", OpKind::layer_norm,
       [](std::mt19937_64& rng) {
         return std::vector<Tensor<double>>{random_tensor({2, 4}, rng), random_tensor({4}, rng),
                                            random_tensor({4}, rng)};
       },
       {{"eps", 0.0}}},
      {"layer_norm eps", OpKind::layer_norm,
       [](std::mt19937_64& rng) {
         return std::vector<Tensor<double>>{random_tensor({2, 4}, rng), random_tensor({4}, rng),
                                            random_tensor({4}, rng)};
       },
       {{"eps", 1e-5}}},
      {"rms_norm", OpKind::rms_norm, pair({2, 4}, {4}), {{"eps", 1e-5}}},
      {"cross_entropy", OpKind::cross_entropy, single({3, 4}),
       {{"targets", IntList{1, kIgnoreIndex, 3}}}},
      {"transpose", OpKind::transpose, single({2, 4}), {{"perm", IntList{1, 0}}}},
      {"transpose 3d", OpKind::transpose, single({2, 2, 3}), {{"perm", IntList{2, 0, 1}}}},
      {"reshape", OpKind::reshape, single({2, 4}), {{"shape", IntList{4, 2}}}},
      {"mean", OpKind::mean, single({8}), {}},
      {"sum", OpKind::sum, single({8}), {}},
      {"concat", OpKind::concat, pair({2, 4}, {1, 4}), {{"axis", std::int64_t{0}}}},
      {"concat axis1", OpKind::concat, pair({2, 2}, {2, 3}), {{"axis", std::int64_t{1}}}},
  };
}

inline GradCheckResult check_op_case(const OpCase& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto inputs = c.make_inputs(rng);
  Fn64 fn = [&c](Tape<double>& tape, const std::vector<Tensor<double>>& in) {
    return op_forward<double>(tape, c.kind, in, c.attrs);
  };
  return check_gradients(fn, std::move(inputs), seed);
}

}  // namespace normadapt::testing
