#pragma once

// Synthetic attribute-grounded tasks. Every sample carries a latent vector of
// K attribute values in [0, M). The text-pretrain form spells the values out
// as context tokens; the mm-adapt form replaces them with K visual tokens.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "normadapt/model.hpp"

namespace normadapt::data {

namespace tok {
inline constexpr std::int64_t kPad = 0;
inline constexpr std::int64_t kEos = 1;
inline constexpr std::int64_t kSep = 2;
inline constexpr std::int64_t kDesc = 3;
inline constexpr std::int64_t kAsk = 4;
inline constexpr std::int64_t kCmp = 5;
inline constexpr std::int64_t kGt = 6;
inline constexpr std::int64_t kLt = 7;
inline constexpr std::int64_t kEq = 8;
inline constexpr std::int64_t kFirstAttribute = 9;
}  // namespace tok

inline std::int64_t attribute_token(std::size_t a) { return tok::kFirstAttribute + static_cast<std::int64_t>(a); }
inline std::int64_t value_token(std::size_t n_attributes, int v) {
  return tok::kFirstAttribute + static_cast<std::int64_t>(n_attributes) + v;
}
inline std::size_t vocab_size(std::size_t n_attributes, std::size_t n_values) {
  return static_cast<std::size_t>(tok::kFirstAttribute) + n_attributes + n_values;
}

enum class TaskKind { text_pretrain, mm_adapt };
enum class Category { conversation = 0, description = 1, reasoning = 2 };

std::string_view category_name(Category c);
std::string_view task_kind_name(TaskKind k);

struct Mixture {
  std::array<double, 3> weights{1.0 / 3, 1.0 / 3, 1.0 / 3};  // conversation, description, reasoning

  /// "a,b,c"; must be non-negative and sum to 1 (within 1e-9).
  static Mixture parse(std::string_view text);
  void validate() const;
  std::string str() const;
};

struct TaskSpec {
  TaskKind kind = TaskKind::mm_adapt;
  Mixture mixture;
  std::size_t n_samples = 1000;
  std::size_t n_attributes = 4;  // latent dimension K
  std::size_t n_values = 8;      // values per attribute M
  std::uint64_t seed = 0;
  // The vision encoder is fixed across splits, so it has its own seed.
  std::uint64_t vision_seed = 7;
  VisionMode vision = VisionMode::aligned;
  std::size_t d_visual = 64;
};

/// Longest question body without the description form (two turns + EOS).
std::size_t body_length();
/// Text-pretrain tokens per sample: K context slots, SEP, the longest body.
/// An mm-adapt sample has the same total length once its K visual tokens
/// take the place of the context.
std::size_t text_length(std::size_t n_attributes);

struct Sample {
  Category category = Category::conversation;
  std::vector<int> latent;
  std::vector<std::int64_t> tokens;
  // One target per position of the full input (visual prefix included);
  // kIgnoreIndex where nothing is scored.
  std::vector<std::int64_t> targets;
  std::vector<double> visual;  // [K, d_visual], mm-adapt only
};

struct Dataset {
  TaskSpec spec;
  std::size_t prefix = 0;   // visual tokens before the text
  std::size_t seq_len = 0;  // text tokens per sample
  std::vector<Sample> samples;

  std::array<std::size_t, 3> category_counts() const;
};

Dataset generate(const TaskSpec& spec);

/// Answers implied by the latent and the question tokens of `s`, in order.
std::vector<std::int64_t> oracle_answers(const Sample& s, std::size_t n_attributes);
/// Tokens at scored positions, in order.
std::vector<std::int64_t> scored_tokens(const Sample& s);

template <Scalar T>
struct Batch {
  TokenBatch tokens;
  Tensor<T> visual;  // undefined for text batches
  std::vector<std::int64_t> targets;
};

template <Scalar T>
Batch<T> make_batch(const Dataset& ds, std::span<const std::size_t> indices);

/// Model shape that fits `spec`: vocab, visual tokens, d_visual and max_seq.
void fit_model_to_task(ModelConfig& config, const TaskSpec& spec);

}  // namespace normadapt::data
