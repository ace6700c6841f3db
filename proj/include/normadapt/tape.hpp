#pragma once

#include <functional>
#include <string_view>
#include <vector>

#include "normadapt/tensor.hpp"

namespace normadapt {

enum class OpKind {
  matmul,
  add,
  mul,
  embed_lookup,
  softmax,
  silu,
  layer_norm,
  rms_norm,
  cross_entropy,
  transpose,
  reshape,
  mean,
  sum,
  concat,
};

std::string_view op_name(OpKind kind);
OpKind op_from_name(std::string_view name);
const std::vector<OpKind>& all_op_kinds();

/// Ordered record of differentiable operations.
///
/// Records are appended as ops execute, so the list is already in
/// topological order; backward() walks it in reverse exactly once. A tape
/// may be consumed by a single backward() and must be reset() before it is
/// reused.
template <Scalar T>
class Tape {
 public:
  // Reads the output gradient and accumulates into inputs that require it.
  using BackwardFn = std::function<void(Tensor<T>& output, std::vector<Tensor<T>>& inputs)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Records `output = kind(inputs)`. The output requires grad iff any input
  // does; nothing is stored for constant subgraphs.
  Tensor<T> record(OpKind kind, std::vector<Tensor<T>> inputs, Tensor<T> output,
                   BackwardFn backward);

  void backward(const Tensor<T>& loss);

  void reset();

  std::size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }
  std::vector<OpKind> kinds() const;

 private:
  struct Record {
    OpKind kind;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    BackwardFn backward;
  };
  std::vector<Record> records_;
  bool consumed_ = false;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace normadapt
