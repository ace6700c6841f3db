#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "normadapt/tape.hpp"
#include "normadapt/tensor.hpp"

namespace normadapt {

using AttrValue = std::variant<bool, std::int64_t, double, std::vector<std::int64_t>>;

// String-keyed attributes for the generic op_forward entry point.
class Attrs {
 public:
  Attrs() = default;
  Attrs(std::initializer_list<std::pair<const std::string, AttrValue>> init) : values_(init) {}

  Attrs& set(const std::string& key, AttrValue value) {
    values_[key] = std::move(value);
    return *this;
  }
  bool contains(const std::string& key) const { return values_.count(key) != 0; }

  template <typename V>
  V get(const std::string& key, V fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (const V* v = std::get_if<V>(&it->second)) return *v;
    throw Error("attribute '" + key + "' has the wrong type");
  }

 private:
  std::map<std::string, AttrValue> values_;
};

// Token ids at or below this value are skipped by cross_entropy.
inline constexpr std::int64_t kIgnoreIndex = -1;

namespace ops {

/// [..., M, K] x [K, N] (weight shared across the batch) or
/// [..., M, K] x [..., K, N] (matching leading dims). With `transpose_b`
/// the right operand is given as [N, K] / [..., N, K].
template <Scalar T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

// Elementwise; `b` may also match a trailing suffix of a's shape.
template <Scalar T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <Scalar T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

// Rows of `weight` [V, d] gathered by id -> [ids.size(), d].
template <Scalar T>
Tensor<T> embed_lookup(Tape<T>& tape, const Tensor<T>& weight, std::span<const std::int64_t> ids);

// Softmax over the last axis of scale * x. `causal` masks the upper
// triangle of the trailing square block.
template <Scalar T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& x, bool causal = false, double scale = 1.0);

template <Scalar T>
Tensor<T> silu(Tape<T>& tape, const Tensor<T>& x);

// Normalizes the last axis: (x - mean) / sqrt(var + eps) * gain + bias,
// population statistics.
template <Scalar T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, double eps);

// x / sqrt(mean(x^2) + eps) * gain over the last axis.
template <Scalar T>
Tensor<T> rms_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gain, double eps);

// Mean token cross-entropy of logits [n, V]; targets equal to kIgnoreIndex
// are skipped.
template <Scalar T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits,
                        std::span<const std::int64_t> targets);

template <Scalar T>
Tensor<T> transpose(Tape<T>& tape, const Tensor<T>& x, std::span<const std::int64_t> perm);

template <Scalar T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape);

template <Scalar T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x);

template <Scalar T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x);

template <Scalar T>
Tensor<T> concat(Tape<T>& tape, std::span<const Tensor<T>> inputs, std::size_t axis);

}  // namespace ops

/// Generic entry point: dispatches `kind` with attributes
///   matmul: transpose_b (bool)
///   embed_lookup: ids (int list)
///   softmax: causal (bool), scale (double)
///   layer_norm / rms_norm: eps (double)
///   cross_entropy: targets (int list)
///   transpose: perm (int list), reshape: shape (int list), concat: axis (int)
template <Scalar T>
Tensor<T> op_forward(Tape<T>& tape, OpKind kind, std::span<const Tensor<T>> inputs,
                     const Attrs& attrs = {});

}  // namespace normadapt
