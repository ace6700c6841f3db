#include "normadapt/tape.hpp"

#include <array>
#include <string>

namespace normadapt {

namespace {

constexpr std::array<std::pair<OpKind, std::string_view>, 14> kOpNames{{
    {OpKind::matmul, "matmul"},
    {OpKind::add, "add"},
    {OpKind::mul, "mul"},
    {OpKind::embed_lookup, "embed_lookup"},
    {OpKind::softmax, "softmax"},
    {OpKind::silu, "silu"},
    {OpKind::layer_norm, "layer_norm"},
    {OpKind::rms_norm, "rms_norm"},
    {OpKind::cross_entropy, "cross_entropy"},
    {OpKind::transpose, "transpose"},
    {OpKind::reshape, "reshape"},
    {OpKind::mean, "mean"},
    {OpKind::sum, "sum"},
    {OpKind::concat, "concat"},
}};

}  // namespace

std::string_view op_name(OpKind kind) {
  for (const auto& [k, name] : kOpNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

OpKind op_from_name(std::string_view name) {
  for (const auto& [k, n] : kOpNames) {
    if (n == name) return k;
  }
  throw Error("unknown op kind '" + std::string(name) + "'");
}

const std::vector<OpKind>& all_op_kinds() {
  static const std::vector<OpKind> kinds = [] {
    std::vector<OpKind> v;
    for (const auto& entry : kOpNames) v.push_back(entry.first);
    return v;
  }();
  return kinds;
}

template <Scalar T>
Tensor<T> Tape<T>::record(OpKind kind, std::vector<Tensor<T>> inputs, Tensor<T> output,
                          BackwardFn backward) {
  if (consumed_) {
    throw AutogradError("tape: recording '" + std::string(op_name(kind)) +
                        "' on a consumed tape; call reset() first");
  }
  bool needs_grad = false;
  for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  output.set_requires_grad(needs_grad);
  if (needs_grad) {
    records_.push_back(Record{kind, std::move(inputs), output, std::move(backward)});
  }
  return output;
}

template <Scalar T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (consumed_) {
    throw AutogradError("tape: backward called twice without reset()");
  }
  if (loss.numel() != 1) {
    throw AutogradError("tape: backward needs a scalar loss, got shape " +
                        shape_str(loss.shape()));
  }
  consumed_ = true;
  if (!loss.requires_grad()) return;

  Tensor<T> seed = loss;
  seed.mutable_grad()[0] += T(1);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->backward(it->output, it->inputs);
  }
  // Intermediate buffers are no longer needed; leaf grads live on the leaves.
  records_.clear();
}

template <Scalar T>
void Tape<T>::reset() {
  records_.clear();
  consumed_ = false;
}

template <Scalar T>
std::vector<OpKind> Tape<T>::kinds() const {
  std::vector<OpKind> out;
  out.reserve(records_.size());
  for (const auto& r : records_) out.push_back(r.kind);
  return out;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace normadapt
