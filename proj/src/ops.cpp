#include "normadapt/ops.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "normadapt/kernels.hpp"

namespace normadapt {

namespace {

[[noreturn]] void shape_fail(OpKind kind, const std::string& what,
                             std::initializer_list<Shape> shapes) {
  std::string msg = std::string(op_name(kind)) + ": " + what + " (shapes";
  for (const auto& s : shapes) msg += " " + shape_str(s);
  msg += ")";
  throw ShapeError(msg);
}

// True when `suffix` equals the trailing dims of `full`.
bool is_suffix(const Shape& full, const Shape& suffix) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

template <Scalar T>
std::vector<T> transposed(const T* data, std::size_t batch, std::size_t rows, std::size_t cols) {
  std::vector<T> out(batch * rows * cols);
  kernels::transpose2d(batch, rows, cols, data, out.data());
  return out;
}

}  // namespace

namespace ops {

template <Scalar T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) shape_fail(OpKind::matmul, "operands must be at least 2-D", {sa, sb});
  const bool shared_b = sb.size() == 2;
  if (!shared_b && (sb.size() != sa.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin()))) {
    shape_fail(OpKind::matmul, "leading dimensions differ", {sa, sb});
  }
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa.back();
  const std::size_t kb = transpose_b ? sb.back() : sb[sb.size() - 2];
  const std::size_t n = transpose_b ? sb[sb.size() - 2] : sb.back();
  if (k != kb) shape_fail(OpKind::matmul, "inner dimensions differ", {sa, sb});

  std::size_t batch = numel(sa) / (m * k);
  // A weight shared across the batch folds the batch into the rows.
  const std::size_t rows = shared_b ? batch * m : m;
  const std::size_t gemm_batch = shared_b ? 1 : batch;

  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(n);
  Tensor<T> out = Tensor<T>::zeros(out_shape);

  std::vector<T> b_kn;
  const T* bptr = b.data().data();
  if (transpose_b) {
    b_kn = transposed(bptr, gemm_batch, n, k);
    bptr = b_kn.data();
  }
  kernels::gemm(gemm_batch, rows, n, k, a.data().data(), rows * k, bptr, k * n,
                out.data().data(), rows * n, false);

  auto backward = [rows, n, k, gemm_batch, transpose_b](Tensor<T>& o, std::vector<Tensor<T>>& in) {
    const T* g = o.grad().data();
    Tensor<T>& a = in[0];
    Tensor<T>& b = in[1];
    if (a.requires_grad()) {
      // dA[rows, k] += dC[rows, n] * B_eff^T, where B_eff^T is [n, k].
      std::vector<T> b_nk;
      const T* bt = b.data().data();
      if (!transpose_b) {
        b_nk = transposed(bt, gemm_batch, k, n);
        bt = b_nk.data();
      }
      kernels::gemm(gemm_batch, rows, k, n, g, rows * n, bt, n * k, a.mutable_grad().data(),
                    rows * k, true);
    }
    if (b.requires_grad()) {
      if (transpose_b) {
        // dB[n, k] += dC^T[n, rows] * A[rows, k]
        std::vector<T> gt = transposed(g, gemm_batch, rows, n);
        kernels::gemm(gemm_batch, n, k, rows, gt.data(), n * rows, a.data().data(), rows * k,
                      b.mutable_grad().data(), n * k, true);
      } else {
        // dB[k, n] += A^T[k, rows] * dC[rows, n]
        std::vector<T> at = transposed(a.data().data(), gemm_batch, rows, k);
        kernels::gemm(gemm_batch, k, n, rows, at.data(), k * rows, g, rows * n,
                      b.mutable_grad().data(), k * n, true);
      }
    }
  };
  return tape.record(OpKind::matmul, {a, b}, std::move(out), std::move(backward));
}

template <Scalar T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (!is_suffix(a.shape(), b.shape())) shape_fail(OpKind::add, "right operand must match a trailing suffix", {a.shape(), b.shape()});
  const std::size_t inner = b.numel();
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto od = out.data();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i % inner];

  auto backward = [inner](Tensor<T>& o, std::vector<Tensor<T>>& in) {
    auto g = o.grad();
    if (in[0].requires_grad()) {
      auto ga = in[0].mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (in[1].requires_grad()) {
      auto gb = in[1].mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % inner] += g[i];
    }
  };
  return tape.record(OpKind::add, {a, b}, std::move(out), std::move(backward));
}

template <Scalar T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (!is_suffix(a.shape(), b.shape())) shape_fail(OpKind::mul, "right operand must match a trailing suffix", {a.shape(), b.shape()});
  const std::size_t inner = b.numel();
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto od = out.data();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i % inner];

  auto backward = [inner](Tensor<T>& o, std::vector<Tensor<T>>& in) {
    auto g = o.grad();
    auto ad = in[0].data();
    auto bd = in[1].data();
    if (in[0].requires_grad()) {
      auto ga = in[0].mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i % inner];
    }
    if (in[1].requires_grad()) {
      auto gb = in[1].mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % inner] += g[i] * ad[i];
    }
  };
  return tape.record(OpKind::mul, {a, b}, std::move(out), std::move(backward));
}

template <Scalar T>
Tensor<T> embed_lookup(Tape<T>& tape, const Tensor<T>& weight, std::span<const std::int64_t> ids) {
  if (weight.rank() != 2) shape_fail(OpKind::embed_lookup, "table must be 2-D", {weight.shape()});
  const std::size_t vocab = weight.dim(0);
  const std::size_t d = weight.dim(1);
  Tensor<T> out = Tensor<T>::zeros({ids.size(), d});
  auto od = out.data();
  auto wd = weight.data();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
      throw ShapeError("embed_lookup: id " + std::to_string(ids[r]) + " outside table of " +
                       std::to_string(vocab) + " rows");
    }
    std::copy_n(wd.begin() + ids[r] * d, d, od.begin() + r * d);
  }
  std::vector<std::int64_t> kept(ids.begin(), ids.end());
  auto backward = [kept = std::move(kept), d](Tensor<T>& o, std::vector<Tensor<T>>& in) {
    if (!in[0].requires_grad()) return;
    auto g = o.grad();
    auto gw = in[0].mutable_grad();
    for (std::size_t r = 0; r < kept.size(); ++r) {
      for (std::size_t j = 0; j < d; ++j) gw[kept[r] * d + j] += g[r * d + j];
    }
  };
  return tape.record(OpKind::embed_lookup, {weight}, std::move(out), std::move(backward));
}

template <Scalar T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& x, bool causal, double scale) {
  if (x.rank() < 1) shape_fail(OpKind::softmax, "needs at least one axis", {x.shape()});
  const std::size_t cols = x.shape().back();
  if (causal && (x.rank() < 2 || x.dim(x.rank() - 2) != cols)) {
    shape_fail(OpKind::softmax, "causal masking needs a square trailing block", {x.shape()});
  }
  const std::size_t rows = x.numel() / cols;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T s = static_cast<T>(scale);
  kernels::softmax_rows(rows, cols, x.data().data(), out.data().data(), s, causal);

  // Keeps the probabilities, not the output handle, to avoid a cycle.
  std::vector<T> probs(out.data().begin(), out.data().end());
  auto backward = [probs = std::move(probs), rows, cols, s](Tensor<T>& o, std::vector<Tensor<T>>& in) {
    if (!in[0].requires_grad()) return;
    kernels::softmax_rows_backward(rows, cols, probs.data(), o.grad().data(),
                                   in[0].mutable_grad().data(), s);
  };
  return tape.record(OpKind::softmax, {x}, std::move(out), std::move(backward));
}

template <Scalar T>
Tensor<T> silu(Tape<T>& tape, const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t i = 0; i < xd.size(); ++i) od[i] = xd[i] / (T(1) + std::exp(-xd[i]));
  auto backward = [](Tensor<T>& o, std::vector<Tensor<T>>& in) {
    if (!in[0].requires_grad()) return;
    auto g = o.grad();
    auto xd = in[0].data();
    auto gx = in[0].mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T sig = T(1) / (T(1) + std::exp(-xd[i]));
      gx[i] += g[i] * sig * (T(1) + xd[i] * (T(1) - sig));
    }
  };
  return tape.record(OpKind::silu, {x}, std::move(out), std::move(backward));
}

template <Scalar T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, double eps) {
  if (x.rank() < 1 || gain.shape() != Shape{x.shape().back()} || bias.shape() != gain.shape()) {
    shape_fail(OpKind::layer_norm, "gain and bias must match the last axis", {x.shape(), gain.shape(), bias.shape()});
  }
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  std::vector<T> mu(rows), rstd(rows);
  kernels::layer_norm_rows(rows, cols, x.data().data(), gain.data().data(), bias.data().data(),
                           out.data().data(), mu.data(), rstd.data(), static_cast<T>(eps));

  auto backward = [mu = std::move(mu), rstd = std::move(rstd), rows, cols](Tensor<T>& o, std::vector<Tensor<T>>& in) {
    const T* g = o.grad().data();
    const T* xd = in[0].data().data();
    if (in[0].requires_grad()) {
      kernels::layer_norm_rows_backward_input(rows, cols, xd, in[1].data().data(), mu.data(),
                                              rstd.data(), g, in[0].mutable_grad().data());
    }
    T* dgain = in[1].requires_grad() ? in[1].mutable_grad().data() : nullptr;
    T* dbias = in[2].requires_grad() ? in[2].mutable_grad().data() : nullptr;
    if (dgain || dbias) {
      kernels::layer_norm_rows_backward_params(rows, cols, xd, mu.data(), rstd.data(), g, dgain, dbias);
    }
  };
  return tape.record(OpKind::layer_norm, {x, gain, bias}, std::move(out), std::move(backward));
}

template <Scalar T>
Tensor<T> rms_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gain, double eps) {
  if (x.rank() < 1 || gain.shape() != Shape{x.shape().back()}) {
    shape_fail(OpKind::rms_norm, "gain must match the last axis", {x.shape(), gain.shape()});
  }
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  std::vector<T> rinv(rows);
  auto xd = x.data();
  auto gd = gain.data();
  auto od = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double ms = 0.0;
    for (std::size_t j = 0; j < cols; ++j) ms += static_cast<double>(xd[r * cols + j]) * xd[r * cols + j];
    ms /= static_cast<double>(cols);
    if (ms + eps <= 0.0) {
      throw DegenerateSigmaError("rms_norm: row " + std::to_string(r) + " is all zeros and epsilon is 0");
    }
    rinv[r] = static_cast<T>(1.0 / std::sqrt(ms + eps));
    for (std::size_t j = 0; j < cols; ++j) od[r * cols + j] = xd[r * cols + j] * rinv[r] * gd[j];
  }

  auto backward = [rinv = std::move(rinv), rows, cols](Tensor<T>& o, std::vector<Tensor<T>>& in) {
    auto g = o.grad();
    auto xd = in[0].data();
    auto gd = in[1].data();
    if (in[0].requires_grad()) {
      auto gx = in[0].mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
          dot += static_cast<double>(g[r * cols + j]) * gd[j] * xd[r * cols + j] * rinv[r];
        }
        dot /= static_cast<double>(cols);
        for (std::size_t j = 0; j < cols; ++j) {
          const double xhat = static_cast<double>(xd[r * cols + j]) * rinv[r];
          gx[r * cols + j] += static_cast<T>(rinv[r] * (static_cast<double>(g[r * cols + j]) * gd[j] - xhat * dot));
        }
      }
    }
    if (in[1].requires_grad()) {
      auto gg = in[1].mutable_grad();
      for (std::size_t j = 0; j < cols; ++j) {
        double s = 0.0;
        for (std::size_t r = 0; r < rows; ++r) s += static_cast<double>(g[r * cols + j]) * xd[r * cols + j] * rinv[r];
        gg[j] += static_cast<T>(s);
      }
    }
  };
  return tape.record(OpKind::rms_norm, {x, gain}, std::move(out), std::move(backward));
}

template <Scalar T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::span<const std::int64_t> targets) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    shape_fail(OpKind::cross_entropy, "logits must be [n, V] with n targets",
               {logits.shape(), Shape{targets.size()}});
  }
  const std::size_t rows = logits.dim(0);
  const std::size_t vocab = logits.dim(1);
  std::vector<T> probs(logits.numel());
  kernels::softmax_rows(rows, vocab, logits.data().data(), probs.data(), T(1), false);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::int64_t t = targets[r];
    if (t == kIgnoreIndex) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw ShapeError("cross_entropy: target " + std::to_string(t) + " outside " +
                       std::to_string(vocab) + " classes");
    }
    // log-sum-exp form keeps tiny probabilities finite
    auto row = logits.data().subspan(r * vocab, vocab);
    const double mx = *std::max_element(row.begin(), row.end());
    double se = 0.0;
    for (T v : row) se += std::exp(static_cast<double>(v) - mx);
    total += mx + std::log(se) - static_cast<double>(row[t]);
    ++counted;
  }
  const double denom = counted ? static_cast<double>(counted) : 1.0;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / denom));

  std::vector<std::int64_t> kept(targets.begin(), targets.end());
  auto backward = [probs = std::move(probs), kept = std::move(kept), vocab, denom](Tensor<T>& o, std::vector<Tensor<T>>& in) {
    if (!in[0].requires_grad()) return;
    const T scale = static_cast<T>(o.grad()[0] / denom);
    auto gl = in[0].mutable_grad();
    for (std::size_t r = 0; r < kept.size(); ++r) {
      if (kept[r] == kIgnoreIndex) continue;
      for (std::size_t j = 0; j < vocab; ++j) gl[r * vocab + j] += scale * probs[r * vocab + j];
      gl[r * vocab + kept[r]] -= scale;
    }
  };
  return tape.record(OpKind::cross_entropy, {logits}, std::move(out), std::move(backward));
}

template <Scalar T>
Tensor<T> transpose(Tape<T>& tape, const Tensor<T>& x, std::span<const std::int64_t> perm) {
  const std::size_t r = x.rank();
  std::vector<bool> seen(r, false);
  bool ok = perm.size() == r;
  for (std::size_t i = 0; ok && i < r; ++i) {
    ok = perm[i] >= 0 && static_cast<std::size_t>(perm[i]) < r && !seen[perm[i]];
    if (ok) seen[perm[i]] = true;
  }
  if (!ok) shape_fail(OpKind::transpose, "perm is not a permutation of the axes", {x.shape(), Shape(perm.begin(), perm.end())});

  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(perm[i]);
  // src_strides[i]: stride in x of output axis i
  std::vector<std::size_t> in_strides(r, 1), src_strides(r);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
  for (std::size_t i = 0; i < r; ++i) src_strides[i] = in_strides[perm[i]];

  auto for_each_index = [out_shape, src_strides, r](auto&& fn) {
    std::vector<std::size_t> idx(r, 0);
    const std::size_t total = numel(out_shape);
    std::size_t src = 0;
    for (std::size_t o = 0; o < total; ++o) {
      fn(o, src);
      for (std::size_t ax = r; ax-- > 0;) {
        ++idx[ax];
        src += src_strides[ax];
        if (idx[ax] < out_shape[ax]) break;
        src -= src_strides[ax] * idx[ax];
        idx[ax] = 0;
      }
    }
  };

  Tensor<T> out = Tensor<T>::zeros(out_shape);
  auto od = out.data();
  auto xd = x.data();
  for_each_index([&](std::size_t o, std::size_t s) { od[o] = xd[s]; });

  auto backward = [for_each_index](Tensor<T>& o, std::vector<Tensor<T>>& in) {
    if (!in[0].requires_grad()) return;
    auto g = o.grad();
    auto gx = in[0].mutable_grad();
    for_each_index([&](std::size_t oi, std::size_t s) { gx[s] += g[oi]; });
  };
  return tape.record(OpKind::transpose, {x}, std::move(out), std::move(backward));
}

template <Scalar T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) shape_fail(OpKind::reshape, "element counts differ", {x.shape(), shape});
  Tensor<T> out = x.reshaped_copy(std::move(shape));
  auto backward = [](Tensor<T>& o, std::vector<Tensor<T>>& in) {
    if (!in[0].requires_grad()) return;
    auto g = o.grad();
    auto gx = in[0].mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  };
  return tape.record(OpKind::reshape, {x}, std::move(out), std::move(backward));
}

template <Scalar T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x) {
  if (x.numel() == 0) shape_fail(OpKind::mean, "empty input", {x.shape()});
  double s = 0.0;
  for (T v : x.data()) s += v;
  const double n = static_cast<double>(x.numel());
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s / n));
  auto backward = [n](Tensor<T>& o, std::vector<Tensor<T>>& in) {
    if (!in[0].requires_grad()) return;
    const T g = static_cast<T>(o.grad()[0] / n);
    for (T& v : in[0].mutable_grad()) v += g;
  };
  return tape.record(OpKind::mean, {x}, std::move(out), std::move(backward));
}

template <Scalar T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  double s = 0.0;
  for (T v : x.data()) s += v;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(s));
  auto backward = [](Tensor<T>& o, std::vector<Tensor<T>>& in) {
    if (!in[0].requires_grad()) return;
    const T g = o.grad()[0];
    for (T& v : in[0].mutable_grad()) v += g;
  };
  return tape.record(OpKind::sum, {x}, std::move(out), std::move(backward));
}

template <Scalar T>
Tensor<T> concat(Tape<T>& tape, std::span<const Tensor<T>> inputs, std::size_t axis) {
  if (inputs.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = inputs[0].shape();
  if (axis >= first.size()) shape_fail(OpKind::concat, "axis out of range", {first});
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& t : inputs) {
    Shape s = t.shape();
    if (s.size() != first.size()) shape_fail(OpKind::concat, "ranks differ", {first, s});
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) shape_fail(OpKind::concat, "non-concat dimensions differ", {first, s});
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];

  std::vector<std::size_t> widths;
  for (const auto& t : inputs) widths.push_back(t.dim(axis) * inner);
  const std::size_t out_width = out_shape[axis] * inner;

  Tensor<T> out = Tensor<T>::zeros(out_shape);
  auto od = out.data();
  std::size_t offset = 0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto id = inputs[t].data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(id.begin() + o * widths[t], widths[t], od.begin() + o * out_width + offset);
    }
    offset += widths[t];
  }

  auto backward = [widths, outer, out_width](Tensor<T>& o, std::vector<Tensor<T>>& in) {
    auto g = o.grad();
    std::size_t offset = 0;
    for (std::size_t t = 0; t < in.size(); ++t) {
      if (in[t].requires_grad()) {
        auto gi = in[t].mutable_grad();
        for (std::size_t r = 0; r < outer; ++r) {
          for (std::size_t j = 0; j < widths[t]; ++j) gi[r * widths[t] + j] += g[r * out_width + offset + j];
        }
      }
      offset += widths[t];
    }
  };
  return tape.record(OpKind::concat, std::vector<Tensor<T>>(inputs.begin(), inputs.end()),
                     std::move(out), std::move(backward));
}

}  // namespace ops

template <Scalar T>
Tensor<T> op_forward(Tape<T>& tape, OpKind kind, std::span<const Tensor<T>> inputs, const Attrs& attrs) {
  auto need = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw ShapeError(std::string(op_name(kind)) + ": expected " + std::to_string(n) +
                       " inputs, got " + std::to_string(inputs.size()));
    }
  };
  using IntList = std::vector<std::int64_t>;
  switch (kind) {
    case OpKind::matmul:
      need(2);
      return ops::matmul(tape, inputs[0], inputs[1], attrs.get<bool>("transpose_b", false));
    case OpKind::add:
      need(2);
      return ops::add(tape, inputs[0], inputs[1]);
    case OpKind::mul:
      need(2);
      return ops::mul(tape, inputs[0], inputs[1]);
    case OpKind::embed_lookup: {
      need(1);
      const IntList ids = attrs.get<IntList>("ids", {});
      return ops::embed_lookup(tape, inputs[0], std::span<const std::int64_t>(ids));
    }
    case OpKind::softmax:
      need(1);
      return ops::softmax(tape, inputs[0], attrs.get<bool>("causal", false), attrs.get<double>("scale", 1.0));
    case OpKind::silu:
      need(1);
      return ops::silu(tape, inputs[0]);
    case OpKind::layer_norm:
      need(3);
      return ops::layer_norm(tape, inputs[0], inputs[1], inputs[2], attrs.get<double>("eps", 1e-5));
    case OpKind::rms_norm:
      need(2);
      return ops::rms_norm(tape, inputs[0], inputs[1], attrs.get<double>("eps", 1e-5));
    case OpKind::cross_entropy: {
      need(1);
      const IntList targets = attrs.get<IntList>("targets", {});
      return ops::cross_entropy(tape, inputs[0], std::span<const std::int64_t>(targets));
    }
    case OpKind::transpose: {
      need(1);
      const IntList perm = attrs.get<IntList>("perm", {});
      return ops::transpose(tape, inputs[0], std::span<const std::int64_t>(perm));
    }
    case OpKind::reshape: {
      need(1);
      const IntList dims = attrs.get<IntList>("shape", {});
      return ops::reshape(tape, inputs[0], Shape(dims.begin(), dims.end()));
    }
    case OpKind::mean:
      need(1);
      return ops::mean(tape, inputs[0]);
    case OpKind::sum:
      need(1);
      return ops::sum(tape, inputs[0]);
    case OpKind::concat:
      return ops::concat(tape, inputs, static_cast<std::size_t>(attrs.get<std::int64_t>("axis", 0)));
  }
  throw Error("op_forward: unhandled kind");
}

#define NA_INSTANTIATE(T)                                                                            \
  template Tensor<T> ops::matmul(Tape<T>&, const Tensor<T>&, const Tensor<T>&, bool);                \
  template Tensor<T> ops::add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> ops::mul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> ops::embed_lookup(Tape<T>&, const Tensor<T>&, std::span<const std::int64_t>);   \
  template Tensor<T> ops::softmax(Tape<T>&, const Tensor<T>&, bool, double);                         \
  template Tensor<T> ops::silu(Tape<T>&, const Tensor<T>&);                                          \
  template Tensor<T> ops::layer_norm(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                     double);                                                        \
  template Tensor<T> ops::rms_norm(Tape<T>&, const Tensor<T>&, const Tensor<T>&, double);            \
  template Tensor<T> ops::cross_entropy(Tape<T>&, const Tensor<T>&, std::span<const std::int64_t>);  \
  template Tensor<T> ops::transpose(Tape<T>&, const Tensor<T>&, std::span<const std::int64_t>);      \
  template Tensor<T> ops::reshape(Tape<T>&, const Tensor<T>&, Shape);                                \
  template Tensor<T> ops::mean(Tape<T>&, const Tensor<T>&);                                          \
  template Tensor<T> ops::sum(Tape<T>&, const Tensor<T>&);                                           \
  template Tensor<T> ops::concat(Tape<T>&, std::span<const Tensor<T>>, std::size_t);                 \
  template Tensor<T> op_forward(Tape<T>&, OpKind, std::span<const Tensor<T>>, const Attrs&);

NA_INSTANTIATE(float)
NA_INSTANTIATE(double)

#undef NA_INSTANTIATE

}  // namespace normadapt
