#pragma once

// Analytic trainable-parameter accounting over architecture presets.

#include <string>
#include <string_view>
#include <vector>

#include "normadapt/model.hpp"
#include "normadapt/peft.hpp"

namespace normadapt::budget {

struct ArchPreset {
  std::string name;
  ModelConfig llm;
  std::size_t vision_params = 0;  // always frozen
};

ArchPreset llama7b();
ArchPreset llama13b();
/// Any registered preset by name; throws ConfigError otherwise.
ArchPreset preset_by_name(std::string_view name);
/// Wraps a toy config so count() can be checked against a built model.
ArchPreset from_config(std::string name, const ModelConfig& config, std::size_t vision_params = 0);

enum class Precision { fp32, bf16 };
std::size_t bytes_per_param(Precision p);
Precision precision_from_name(std::string_view name);
std::string_view precision_name(Precision p);

struct BudgetReport {
  std::string preset;
  std::string strategy;
  std::size_t trainable = 0;
  std::size_t total = 0;  // LLM + connector + vision encoder (+ adapters)
  double percentage = 0.0;
  Precision precision = Precision::fp32;
  // trainable x bytes x (weight gradient + two moment buffers)
  std::size_t optimizer_state_bytes = 0;
};

BudgetReport count(const ArchPreset& preset, const TuningStrategy& strategy, Precision precision = Precision::fp32);

struct Table2Row {
  std::string preset;
  std::string strategy;
  double computed = 0.0;  // percent
  double published = 0.0; // percent
  double abs_diff = 0.0;
  double tolerance = 0.0;
  bool gated = true;       // false for rows that are only reported
  bool within = false;
};

std::vector<Table2Row> table2_reproduction();

std::string report_json(const BudgetReport& r);
std::string table2_csv(const std::vector<Table2Row>& rows);

}  // namespace normadapt::budget
