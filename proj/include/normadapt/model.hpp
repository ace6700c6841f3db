#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "normadapt/ops.hpp"
#include "normadapt/param_tree.hpp"

namespace normadapt {

enum class NormKind { standard, rms };
enum class MlpKind { plain, gated };

std::string_view norm_kind_name(NormKind k);
NormKind norm_kind_from_name(std::string_view name);

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t d_ff = 512;
  std::size_t vocab_size = 256;
  std::size_t max_seq = 64;
  NormKind norm_kind = NormKind::standard;
  std::size_t n_visual_tokens = 4;
  std::size_t d_visual = 64;
  bool tie_embeddings = false;
  // Three-projection SiLU-gated MLP (LLaMA style); two-projection otherwise.
  MlpKind mlp_kind = MlpKind::plain;
  bool learned_positions = true;
  double norm_eps = 1e-5;

  // Throws ConfigError naming the violated constraint.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// Parameter count from the architecture formula alone.
std::size_t closed_form_param_count(const ModelConfig& config);

struct ParamSpec {
  enum class Init { normal, ones, zeros };
  std::string path;
  Shape shape;
  Init init;
};

/// Every parameter path and shape the config produces, in build order.
/// Shared by Model::build and the analytic budget so both count the same
/// inventory.
std::vector<ParamSpec> param_inventory(const ModelConfig& config);

namespace paths {
inline constexpr const char* kEmbed = "embed.weight";
inline constexpr const char* kHead = "head.weight";
inline constexpr const char* kConnectorWeight = "connector.weight";
inline constexpr const char* kConnectorBias = "connector.bias";
inline constexpr const char* kPos = "pos.weight";
inline constexpr const char* kFinalNorm = "final_norm";
std::string block(std::size_t i, std::string_view rest);
}  // namespace paths

/// Synthetic frozen vision encoder. Token t of an image encodes attribute
/// t mod K of the sample's latent. In `aligned` mode each token is a fixed
/// codebook vector plus small noise, so a linear connector can map it into
/// embedding space. In `unaligned` mode the concatenated codes are mixed
/// across tokens by a fixed random matrix and a tanh, emulating features
/// that were never trained toward language.
enum class VisionMode { aligned, unaligned };

class VisionStub {
 public:
  VisionStub(VisionMode mode, std::uint64_t seed, std::size_t n_tokens, std::size_t d_visual,
             std::size_t n_attributes, std::size_t n_values);

  // n_tokens * d_visual features, deterministic in (seed, attributes, sample_id).
  std::vector<double> encode(std::span<const int> attributes, std::uint64_t sample_id) const;

  VisionMode mode() const { return mode_; }
  std::size_t n_tokens() const { return n_tokens_; }
  std::size_t d_visual() const { return d_visual_; }

 private:
  VisionMode mode_;
  std::uint64_t seed_;
  std::size_t n_tokens_, d_visual_, n_attributes_, n_values_;
  std::vector<double> codebook_;  // [n_attributes, n_values, d_visual]
  std::vector<double> mixing_;    // [D, D], D = n_tokens * d_visual
  double noise_ = 0.05;
};

// B equal-length token sequences, row-major [batch, seq].
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::int64_t> ids;
};

// LoRA adapters use scaling alpha / rank with alpha = rank.
inline constexpr double kLoraScaling = 1.0;

template <Scalar T>
class Model {
 public:
  static Model build(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParamTree<T>& params() { return params_; }
  // Deep copy; the copy's parameters share no storage with this model.
  Model clone() const { return Model(config_, params_.clone()); }
  const ParamTree<T>& params() const { return params_; }

  /// Logits [batch * seq_total, vocab] where seq_total includes the visual
  /// prefix when `visual` ([batch, n_visual_tokens, d_visual]) is given.
  Tensor<T> forward(Tape<T>& tape, const TokenBatch& tokens) const;
  Tensor<T> forward(Tape<T>& tape, const TokenBatch& tokens, const Tensor<T>& visual) const;

  /// Decoder over already-embedded inputs [batch, seq, d_model]; adds
  /// positions, runs the blocks, final norm and head.
  Tensor<T> forward_embeddings(Tape<T>& tape, const Tensor<T>& embeds) const;

  /// Prefix (connector output) and token embeddings, [batch, seq_total, d_model].
  Tensor<T> embed_inputs(Tape<T>& tape, const TokenBatch& tokens, const Tensor<T>* visual) const;

  /// Post-residual output of every block, [batch * seq_total, d_model] each,
  /// detached from any tape.
  std::vector<Tensor<T>> capture_layer_outputs(const TokenBatch& tokens,
                                               const Tensor<T>* visual = nullptr) const;

  /// Runs the blocks from `block_index` on a hidden state [batch*seq, d_model].
  Tensor<T> run_block(Tape<T>& tape, std::size_t block_index, const Tensor<T>& hidden,
                      std::size_t batch, std::size_t seq) const;

 private:
  Model(ModelConfig config, ParamTree<T> params) : config_(std::move(config)), params_(std::move(params)) {}

  Tensor<T> decode(Tape<T>& tape, const Tensor<T>& embeds, std::vector<Tensor<T>>* captures) const;
  Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const std::string& weight_path) const;
  Tensor<T> norm(Tape<T>& tape, const Tensor<T>& x, const std::string& prefix) const;
  Tensor<T> attention(Tape<T>& tape, const Tensor<T>& x, std::size_t layer, std::size_t batch,
                      std::size_t seq) const;
  Tensor<T> mlp(Tape<T>& tape, const Tensor<T>& x, std::size_t layer) const;

  template <Scalar U>
  friend Model<U> load_checkpoint(const std::string& path);

  ModelConfig config_;
  ParamTree<T> params_;
};

extern template class Model<float>;
extern template class Model<double>;

/// Checkpoint archive: magic "NORMADAPT1", a length-prefixed `key = value`
/// config header, then (path, dtype, shape, little-endian data) records.
template <Scalar T>
void save_checkpoint(const Model<T>& model, const std::string& path);

template <Scalar T>
Model<T> load_checkpoint(const std::string& path);

std::string config_to_text(const ModelConfig& config);
ModelConfig config_from_text(const std::string& text);

}  // namespace normadapt
