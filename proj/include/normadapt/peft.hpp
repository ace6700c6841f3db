#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "normadapt/model.hpp"
#include "normadapt/param_tree.hpp"

namespace normadapt {

enum class StrategyKind { finetune, lora, attn_qv, attn_mlp, layernorm, layernorm_simple, frozen };

// CLI spellings: finetune, lora, attn-qv, attn-mlp, layernorm, layernorm-simple, frozen.
std::string_view strategy_name(StrategyKind kind);
StrategyKind strategy_from_name(std::string_view name);
const std::vector<StrategyKind>& comparison_strategies();

struct TuningStrategy {
  StrategyKind kind = StrategyKind::finetune;
  std::size_t lora_rank = 32;
  // connector + word embedding + output head (+ learned positions).
  bool include_defaults = true;
  // Overrides the connector's trainability independently of the defaults.
  std::optional<bool> connector;

  // Default-constructed strategy of `kind`; layernorm-simple drops the defaults.
  static TuningStrategy of(StrategyKind kind);

  void validate() const;
  std::string label() const;
};

struct SelectionReport {
  std::vector<std::string> selected;
  std::size_t trainable = 0;
  std::size_t total = 0;
  double fraction = 0.0;
};

struct PathInfo {
  std::string path;
  Shape shape;
};

/// Glob over dot-separated paths: `*` matches one segment, `**` one or more.
bool path_matches(std::string_view pattern, std::string_view path);

/// Indices into `params` that `strategy` trains. Throws SelectionError when
/// a required pattern of the rule matches nothing.
std::vector<std::size_t> select_indices(const TuningStrategy& strategy, std::span<const PathInfo> params);

/// Sets trainability on every entry of `tree` and reports the selection.
template <Scalar T>
SelectionReport select_trainable(const TuningStrategy& strategy, ParamTree<T>& tree);

/// Recount from a path list; used to cross-check stored reports.
template <Scalar T>
std::size_t count_paths(const ParamTree<T>& tree, std::span<const std::string> selected);

inline const std::vector<std::string>& default_lora_targets() {
  static const std::vector<std::string> targets{"blocks.*.attn.*.weight", "blocks.*.mlp.*.weight"};
  return targets;
}

/// Adapter shapes that inject_lora would add for `params`, without allocating.
std::vector<PathInfo> lora_adapter_inventory(std::span<const PathInfo> params, std::size_t rank,
                                             std::span<const std::string> targets = default_lora_targets());

template <Scalar T>
struct LoraAdapter {
  std::string target;
  Tensor<T> a;  // [rank, in]
  Tensor<T> b;  // [out, rank]
  double scaling = 1.0;
};

/// Registers `{target}.lora_A` / `.lora_B` for every 2-D weight matched by
/// `targets`, freezes the matched base weights, and leaves the function
/// unchanged (B starts at zero).
template <Scalar T>
std::vector<LoraAdapter<T>> inject_lora(ParamTree<T>& tree, std::size_t rank, std::uint64_t seed,
                                        std::span<const std::string> targets = default_lora_targets());

/// Folds base + scaling * B * A into each target and removes the adapters.
template <Scalar T>
void merge_lora(ParamTree<T>& tree, std::span<const LoraAdapter<T>> adapters);

}  // namespace normadapt
