#pragma once

// Flat `key = value` run configuration shared by the CLI subcommands.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "normadapt/train.hpp"

namespace normadapt {

struct RunConfig {
  std::string strategy = "layernorm";
  std::optional<double> lr;  // when set, used for every strategy
  std::optional<std::size_t> steps;
  std::optional<std::size_t> batch;
  std::optional<double> warmup_ratio;
  std::optional<double> weight_decay;
  std::uint64_t seed = 0;
  std::string preset = "toy";
  std::optional<data::Mixture> mixture;
  std::optional<NormKind> norm_kind;
  std::optional<std::size_t> lora_rank;
  std::optional<bool> include_defaults;
  std::string outdir = "out";

  /// Applies one key; throws ConfigError naming the key for bad values.
  void set(std::string_view key, std::string_view value);
  std::string to_text() const;
};

/// '#' starts a comment line; blank lines are skipped; keys may appear once.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::string& path);

/// "name", "name+connector" or "name-connector".
TuningStrategy parse_strategy_spec(std::string_view spec);

harness::ExperimentConfig to_experiment(const RunConfig& rc);
TuningStrategy to_strategy(const RunConfig& rc);

}  // namespace normadapt
