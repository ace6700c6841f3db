#include "normadapt/model.hpp"

#include <cmath>
#include <random>
#include <string>

namespace normadapt {

std::string_view norm_kind_name(NormKind k) { return k == NormKind::standard ? "standard" : "rms"; }

NormKind norm_kind_from_name(std::string_view name) {
  if (name == "standard") return NormKind::standard;
  if (name == "rms") return NormKind::rms;
  throw ConfigError("unknown norm_kind '" + std::string(name) + "' (expected standard or rms)");
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("model config: ") + what);
  };
  require(n_layers > 0, "n_layers must be positive");
  require(d_model > 0, "d_model must be positive");
  require(n_heads > 0, "n_heads must be positive");
  require(d_ff > 0, "d_ff must be positive");
  require(vocab_size > 0, "vocab_size must be positive");
  require(max_seq > 0, "max_seq must be positive");
  require(n_visual_tokens > 0, "n_visual_tokens must be positive");
  require(d_visual > 0, "d_visual must be positive");
  require(d_model % n_heads == 0, "d_model must be divisible by n_heads");
  require(n_visual_tokens <= max_seq, "n_visual_tokens must not exceed max_seq");
  require(norm_eps >= 0.0, "norm_eps must be non-negative");
}

std::size_t closed_form_param_count(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  const std::size_t norm = c.norm_kind == NormKind::standard ? 2 * d : d;
  const std::size_t mlp = (c.mlp_kind == MlpKind::gated ? 3 : 2) * d * c.d_ff;
  const std::size_t per_block = 4 * d * d + mlp + 2 * norm;
  return c.vocab_size * d * (c.tie_embeddings ? 1 : 2) + (c.d_visual * d + d) +
         (c.learned_positions ? c.max_seq * d : 0) + c.n_layers * per_block + norm;
}

namespace paths {
std::string block(std::size_t i, std::string_view rest) {
  return "blocks." + std::to_string(i) + "." + std::string(rest);
}
}  // namespace paths

std::vector<ParamSpec> param_inventory(const ModelConfig& c) {
  using Init = ParamSpec::Init;
  const std::size_t d = c.d_model;
  std::vector<ParamSpec> out;
  auto add_norm = [&](const std::string& prefix) {
    out.push_back({prefix + ".weight", {d}, Init::ones});
    if (c.norm_kind == NormKind::standard) out.push_back({prefix + ".bias", {d}, Init::zeros});
  };
  out.push_back({paths::kEmbed, {c.vocab_size, d}, Init::normal});
  if (c.learned_positions) out.push_back({paths::kPos, {c.max_seq, d}, Init::normal});
  out.push_back({paths::kConnectorWeight, {d, c.d_visual}, Init::normal});
  out.push_back({paths::kConnectorBias, {d}, Init::zeros});
  for (std::size_t i = 0; i < c.n_layers; ++i) {
    add_norm(paths::block(i, "input_norm"));
    for (const char* proj : {"q_proj", "k_proj", "v_proj", "o_proj"}) {
      out.push_back({paths::block(i, std::string("attn.") + proj + ".weight"), {d, d}, Init::normal});
    }
    add_norm(paths::block(i, "post_norm"));
    out.push_back({paths::block(i, "mlp.fc1.weight"), {c.d_ff, d}, Init::normal});
    out.push_back({paths::block(i, "mlp.fc2.weight"), {d, c.d_ff}, Init::normal});
    if (c.mlp_kind == MlpKind::gated) {
      out.push_back({paths::block(i, "mlp.gate.weight"), {c.d_ff, d}, Init::normal});
    }
  }
  add_norm(paths::kFinalNorm);
  if (!c.tie_embeddings) out.push_back({paths::kHead, {c.vocab_size, d}, Init::normal});
  return out;
}

// ---------------------------------------------------------------------------
// VisionStub

VisionStub::VisionStub(VisionMode mode, std::uint64_t seed, std::size_t n_tokens,
                       std::size_t d_visual, std::size_t n_attributes, std::size_t n_values)
    : mode_(mode), seed_(seed), n_tokens_(n_tokens), d_visual_(d_visual),
      n_attributes_(n_attributes), n_values_(n_values) {
  if (n_tokens == 0 || d_visual == 0 || n_attributes == 0 || n_values == 0) {
    throw ConfigError("vision stub: all sizes must be positive");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  codebook_.resize(n_attributes * n_values * d_visual);
  for (double& v : codebook_) v = dist(rng);
  if (mode == VisionMode::unaligned) {
    const std::size_t dim = n_tokens * d_visual;
    const double scale = 2.0 / std::sqrt(static_cast<double>(dim));
    mixing_.resize(dim * dim);
    for (double& v : mixing_) v = scale * dist(rng);
  }
}

std::vector<double> VisionStub::encode(std::span<const int> attributes, std::uint64_t sample_id) const {
  if (attributes.size() != n_attributes_) {
    throw ShapeError("vision stub: expected " + std::to_string(n_attributes_) + " attributes, got " +
                     std::to_string(attributes.size()));
  }
  std::mt19937_64 rng(seed_ ^ (0x5851f42d4c957f2dULL * (sample_id + 1)));
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> code(n_tokens_ * d_visual_);
  for (std::size_t t = 0; t < n_tokens_; ++t) {
    const std::size_t attr = t % n_attributes_;
    const int value = attributes[attr];
    if (value < 0 || static_cast<std::size_t>(value) >= n_values_) {
      throw ShapeError("vision stub: attribute value " + std::to_string(value) + " out of range");
    }
    const double* row = codebook_.data() + (attr * n_values_ + value) * d_visual_;
    for (std::size_t j = 0; j < d_visual_; ++j) code[t * d_visual_ + j] = row[j] + noise_ * dist(rng);
  }
  if (mode_ == VisionMode::aligned) return code;

  const std::size_t dim = code.size();
  std::vector<double> mixed(dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) s += mixing_[i * dim + j] * code[j];
    mixed[i] = std::tanh(s);
  }
  return mixed;
}

// ---------------------------------------------------------------------------
// Model

template <Scalar T>
Model<T> Model<T>::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.02);
  ParamTree<T> tree;
  for (const auto& spec : param_inventory(config)) {
    std::vector<T> data(numel(spec.shape));
    switch (spec.init) {
      case ParamSpec::Init::normal:
        for (T& v : data) v = static_cast<T>(dist(rng));
        break;
      case ParamSpec::Init::ones:
        std::fill(data.begin(), data.end(), T(1));
        break;
      case ParamSpec::Init::zeros:
        break;
    }
    tree.add(spec.path, Tensor<T>(spec.shape, std::move(data)), true);
  }
  return Model(config, std::move(tree));
}

template <Scalar T>
Tensor<T> Model<T>::linear(Tape<T>& tape, const Tensor<T>& x, const std::string& weight_path) const {
  Tensor<T> y = ops::matmul(tape, x, params_.at(weight_path), true);
  const std::string a_path = weight_path + ".lora_A";
  if (params_.contains(a_path)) {
    Tensor<T> low = ops::matmul(tape, x, params_.at(a_path), true);
    static_assert(kLoraScaling == 1.0, "adapter path omits the scaling product");
    y = ops::add(tape, y, ops::matmul(tape, low, params_.at(weight_path + ".lora_B"), true));
  }
  return y;
}

template <Scalar T>
Tensor<T> Model<T>::norm(Tape<T>& tape, const Tensor<T>& x, const std::string& prefix) const {
  if (config_.norm_kind == NormKind::standard) {
    return ops::layer_norm(tape, x, params_.at(prefix + ".weight"), params_.at(prefix + ".bias"),
                           config_.norm_eps);
  }
  return ops::rms_norm(tape, x, params_.at(prefix + ".weight"), config_.norm_eps);
}

template <Scalar T>
Tensor<T> Model<T>::attention(Tape<T>& tape, const Tensor<T>& x, std::size_t layer, std::size_t batch,
                              std::size_t seq) const {
  const std::size_t d = config_.d_model;
  const std::size_t heads = config_.n_heads;
  const std::size_t dh = d / heads;
  static const std::vector<std::int64_t> kSplit{0, 2, 1, 3};
  auto split_heads = [&](const Tensor<T>& t) {
    return ops::transpose(tape, ops::reshape(tape, t, {batch, seq, heads, dh}), kSplit);
  };
  Tensor<T> q = split_heads(linear(tape, x, paths::block(layer, "attn.q_proj.weight")));
  Tensor<T> k = split_heads(linear(tape, x, paths::block(layer, "attn.k_proj.weight")));
  Tensor<T> v = split_heads(linear(tape, x, paths::block(layer, "attn.v_proj.weight")));
  Tensor<T> scores = ops::matmul(tape, q, k, true);
  Tensor<T> probs = ops::softmax(tape, scores, true, 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor<T> ctx = ops::transpose(tape, ops::matmul(tape, probs, v), kSplit);
  return linear(tape, ops::reshape(tape, ctx, {batch * seq, d}), paths::block(layer, "attn.o_proj.weight"));
}

template <Scalar T>
Tensor<T> Model<T>::mlp(Tape<T>& tape, const Tensor<T>& x, std::size_t layer) const {
  Tensor<T> up = linear(tape, x, paths::block(layer, "mlp.fc1.weight"));
  Tensor<T> act;
  if (config_.mlp_kind == MlpKind::gated) {
    act = ops::mul(tape, ops::silu(tape, linear(tape, x, paths::block(layer, "mlp.gate.weight"))), up);
  } else {
    act = ops::silu(tape, up);
  }
  return linear(tape, act, paths::block(layer, "mlp.fc2.weight"));
}

template <Scalar T>
Tensor<T> Model<T>::run_block(Tape<T>& tape, std::size_t i, const Tensor<T>& hidden, std::size_t batch,
                              std::size_t seq) const {
  Tensor<T> h = ops::add(tape, hidden, attention(tape, norm(tape, hidden, paths::block(i, "input_norm")), i, batch, seq));
  return ops::add(tape, h, mlp(tape, norm(tape, h, paths::block(i, "post_norm")), i));
}

template <Scalar T>
Tensor<T> Model<T>::decode(Tape<T>& tape, const Tensor<T>& embeds, std::vector<Tensor<T>>* captures) const {
  if (embeds.rank() != 3 || embeds.dim(2) != config_.d_model) {
    throw ShapeError("model: embeddings must be [batch, seq, " + std::to_string(config_.d_model) +
                     "], got " + shape_str(embeds.shape()));
  }
  const std::size_t batch = embeds.dim(0);
  const std::size_t seq = embeds.dim(1);
  if (seq > config_.max_seq) {
    throw ShapeError("model: sequence of " + std::to_string(seq) + " positions exceeds max_seq " +
                     std::to_string(config_.max_seq));
  }
  Tensor<T> h = ops::reshape(tape, embeds, {batch * seq, config_.d_model});
  if (config_.learned_positions) {
    std::vector<std::int64_t> positions(seq);
    for (std::size_t s = 0; s < seq; ++s) positions[s] = static_cast<std::int64_t>(s);
    Tensor<T> pos = ops::embed_lookup(tape, params_.at(paths::kPos), std::span<const std::int64_t>(positions));
    h = ops::reshape(tape, ops::add(tape, ops::reshape(tape, h, {batch, seq, config_.d_model}), pos),
                     {batch * seq, config_.d_model});
  }
  for (std::size_t i = 0; i < config_.n_layers; ++i) {
    h = run_block(tape, i, h, batch, seq);
    if (captures) captures->push_back(h.detach());
  }
  h = norm(tape, h, paths::kFinalNorm);
  const char* head = config_.tie_embeddings ? paths::kEmbed : paths::kHead;
  return ops::matmul(tape, h, params_.at(head), true);
}

template <Scalar T>
Tensor<T> Model<T>::embed_inputs(Tape<T>& tape, const TokenBatch& tokens, const Tensor<T>* visual) const {
  if (tokens.ids.size() != tokens.batch * tokens.seq) {
    throw ShapeError("model: token batch holds " + std::to_string(tokens.ids.size()) + " ids for " +
                     std::to_string(tokens.batch) + "x" + std::to_string(tokens.seq));
  }
  for (std::int64_t id : tokens.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
      throw ShapeError("model: token id " + std::to_string(id) + " outside vocab of " +
                       std::to_string(config_.vocab_size));
    }
  }
  const std::size_t d = config_.d_model;
  const std::size_t total = tokens.seq + (visual ? config_.n_visual_tokens : 0);
  if (total > config_.max_seq) {
    throw ShapeError("model: " + std::to_string(total) + " positions exceed max_seq " +
                     std::to_string(config_.max_seq));
  }
  Tensor<T> text = ops::reshape(tape, ops::embed_lookup(tape, params_.at(paths::kEmbed), std::span<const std::int64_t>(tokens.ids)),
                                {tokens.batch, tokens.seq, d});
  if (!visual) return text;

  const Shape want{tokens.batch, config_.n_visual_tokens, config_.d_visual};
  if (visual->shape() != want) {
    throw ShapeError("model: visual features must be " + shape_str(want) + ", got " + shape_str(visual->shape()));
  }
  Tensor<T> prefix = ops::matmul(tape, *visual, params_.at(paths::kConnectorWeight), true);
  prefix = ops::add(tape, prefix, params_.at(paths::kConnectorBias));
  std::vector<Tensor<T>> parts{prefix, text};
  return ops::concat(tape, std::span<const Tensor<T>>(parts), 1);
}

template <Scalar T>
Tensor<T> Model<T>::forward_embeddings(Tape<T>& tape, const Tensor<T>& embeds) const {
  return decode(tape, embeds, nullptr);
}

template <Scalar T>
Tensor<T> Model<T>::forward(Tape<T>& tape, const TokenBatch& tokens) const {
  return decode(tape, embed_inputs(tape, tokens, nullptr), nullptr);
}

template <Scalar T>
Tensor<T> Model<T>::forward(Tape<T>& tape, const TokenBatch& tokens, const Tensor<T>& visual) const {
  return decode(tape, embed_inputs(tape, tokens, &visual), nullptr);
}

template <Scalar T>
std::vector<Tensor<T>> Model<T>::capture_layer_outputs(const TokenBatch& tokens, const Tensor<T>* visual) const {
  Tape<T> scratch;
  std::vector<Tensor<T>> captures;
  decode(scratch, embed_inputs(scratch, tokens, visual), &captures);
  return captures;
}

template class Model<float>;
template class Model<double>;

}  // namespace normadapt
