#include "normadapt/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace normadapt {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(std::string_view key, std::string_view v) {
  const std::string text(v);
  try {
    std::size_t used = 0;
    const double d = std::stod(text, &used);
    if (used == text.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("config: " + std::string(key) + " = '" + text + "' is not a number");
}

std::uint64_t parse_uint(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config: " + std::string(key) + " = '" + std::string(v) + "' is not a non-negative integer");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: " + std::string(key) + " = '" + std::string(v) + "' is not true or false");
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view raw) {
  const auto value = trim(raw);
  if (key == "strategy") {
    parse_strategy_spec(value);
    strategy = std::string(value);
  } else if (key == "lr") {
    lr = parse_double(key, value);
    if (!(*lr >= 0.0)) throw ConfigError("config: lr must be non-negative");
  } else if (key == "steps") {
    steps = parse_uint(key, value);
  } else if (key == "batch") {
    batch = parse_uint(key, value);
    if (*batch == 0) throw ConfigError("config: batch must be positive");
  } else if (key == "warmup_ratio") {
    warmup_ratio = parse_double(key, value);
    if (!(*warmup_ratio >= 0.0 && *warmup_ratio < 1.0)) throw ConfigError("config: warmup_ratio must be in [0, 1)");
  } else if (key == "weight_decay") {
    weight_decay = parse_double(key, value);
  } else if (key == "seed") {
    seed = parse_uint(key, value);
  } else if (key == "preset") {
    harness::experiment_preset(value);
    preset = std::string(value);
  } else if (key == "mixture") {
    mixture = data::Mixture::parse(value);
  } else if (key == "norm_kind") {
    norm_kind = norm_kind_from_name(value);
  } else if (key == "lora_rank") {
    lora_rank = parse_uint(key, value);
    if (*lora_rank == 0) throw ConfigError("config: lora_rank must be positive");
  } else if (key == "include_defaults") {
    include_defaults = parse_bool(key, value);
  } else if (key == "outdir") {
    if (value.empty()) throw ConfigError("config: outdir must not be empty");
    outdir = std::string(value);
  } else {
    throw ConfigError("config: unknown key '" + std::string(key) + "'");
  }
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  out.precision(17);
  out << "strategy = " << strategy << "\n";
  if (lr) out << "lr = " << *lr << "\n";
  if (steps) out << "steps = " << *steps << "\n";
  if (batch) out << "batch = " << *batch << "\n";
  if (warmup_ratio) out << "warmup_ratio = " << *warmup_ratio << "\n";
  if (weight_decay) out << "weight_decay = " << *weight_decay << "\n";
  out << "seed = " << seed << "\n";
  out << "preset = " << preset << "\n";
  if (mixture) out << "mixture = " << mixture->str() << "\n";
  if (norm_kind) out << "norm_kind = " << norm_kind_name(*norm_kind) << "\n";
  if (lora_rank) out << "lora_rank = " << *lora_rank << "\n";
  if (include_defaults) out << "include_defaults = " << (*include_defaults ? "true" : "false") << "\n";
  out << "outdir = " << outdir << "\n";
  return out.str();
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig rc;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    const auto line = trim(text.substr(start, nl == std::string_view::npos ? text.npos : nl - start));
    ++line_no;
    start = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key(trim(line.substr(0, eq)));
    if (!seen.insert(key).second) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    try {
      rc.set(key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

TuningStrategy parse_strategy_spec(std::string_view spec) {
  std::optional<bool> connector;
  std::string_view name = spec;
  for (const auto& [suffix, on] : {std::pair{std::string_view("+connector"), true}, {"-connector", false}}) {
    if (name.size() > suffix.size() && name.ends_with(suffix)) {
      connector = on;
      name.remove_suffix(suffix.size());
      break;
    }
  }
  TuningStrategy s = TuningStrategy::of(strategy_from_name(name));
  s.connector = connector;
  return s;
}

harness::ExperimentConfig to_experiment(const RunConfig& rc) {
  auto cfg = harness::experiment_preset(rc.preset);
  if (rc.lr) {
    cfg.adapt.lr = *rc.lr;
    cfg.tuned_lr.clear();
  }
  if (rc.steps) cfg.adapt.steps = *rc.steps;
  if (rc.batch) cfg.adapt.batch = *rc.batch;
  if (rc.warmup_ratio) cfg.adapt.warmup_ratio = *rc.warmup_ratio;
  if (rc.weight_decay) cfg.adapt.weight_decay = *rc.weight_decay;
  if (rc.mixture) cfg.task.mixture = *rc.mixture;
  if (rc.norm_kind) cfg.model.norm_kind = *rc.norm_kind;
  cfg.adapt.seed = rc.seed;
  cfg.validate();
  return cfg;
}

TuningStrategy to_strategy(const RunConfig& rc) {
  TuningStrategy s = parse_strategy_spec(rc.strategy);
  if (rc.lora_rank) s.lora_rank = *rc.lora_rank;
  if (rc.include_defaults) s.include_defaults = *rc.include_defaults;
  s.validate();
  return s;
}

}  // namespace normadapt
