#include "normadapt/peft.hpp"

#include <array>
#include <random>

namespace normadapt {

namespace {

constexpr std::array<std::pair<StrategyKind, std::string_view>, 7> kNames{{
    {StrategyKind::finetune, "finetune"},
    {StrategyKind::lora, "lora"},
    {StrategyKind::attn_qv, "attn-qv"},
    {StrategyKind::attn_mlp, "attn-mlp"},
    {StrategyKind::layernorm, "layernorm"},
    {StrategyKind::layernorm_simple, "layernorm-simple"},
    {StrategyKind::frozen, "frozen"},
}};

struct Rule {
  std::string_view pattern;
  bool required;  // must match at least one parameter
};

const std::vector<Rule>& llm_rules(StrategyKind kind) {
  static const std::vector<Rule> finetune{{"embed.weight", true},
                                          {"pos.weight", false},
                                          {"head.weight", false},
                                          {"blocks.**", true},
                                          {"final_norm.*", true}};
  static const std::vector<Rule> lora{{"blocks.**.lora_A", true}, {"blocks.**.lora_B", true}};
  static const std::vector<Rule> attn_qv{{"blocks.*.attn.q_proj.weight", true},
                                         {"blocks.*.attn.v_proj.weight", true}};
  static const std::vector<Rule> attn_mlp{{"blocks.*.mlp.*.weight", true}};
  static const std::vector<Rule> norms{{"blocks.*.input_norm.*", true},
                                       {"blocks.*.post_norm.*", true},
                                       {"final_norm.*", true}};
  static const std::vector<Rule> none{};
  switch (kind) {
    case StrategyKind::finetune: return finetune;
    case StrategyKind::lora: return lora;
    case StrategyKind::attn_qv: return attn_qv;
    case StrategyKind::attn_mlp: return attn_mlp;
    case StrategyKind::layernorm:
    case StrategyKind::layernorm_simple: return norms;
    case StrategyKind::frozen: return none;
  }
  return none;
}

const std::vector<Rule>& default_rules() {
  static const std::vector<Rule> rules{{"embed.weight", true}, {"head.weight", false}, {"pos.weight", false}};
  return rules;
}

constexpr Rule kConnectorRule{"connector.*", true};

bool segments_match(std::span<const std::string_view> pat, std::span<const std::string_view> path) {
  if (pat.empty()) return path.empty();
  if (pat[0] == "**") {
    for (std::size_t take = 1; take <= path.size(); ++take) {
      if (segments_match(pat.subspan(1), path.subspan(take))) return true;
    }
    return false;
  }
  if (path.empty()) return false;
  if (pat[0] != "*" && pat[0] != path[0]) return false;
  return segments_match(pat.subspan(1), path.subspan(1));
}

std::vector<std::string_view> split(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto dot = s.find('.', start);
    out.push_back(s.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start));
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return out;
}

}  // namespace

std::string_view strategy_name(StrategyKind kind) {
  for (const auto& [k, n] : kNames) {
    if (k == kind) return n;
  }
  return "unknown";
}

StrategyKind strategy_from_name(std::string_view name) {
  for (const auto& [k, n] : kNames) {
    if (n == name) return k;
  }
  throw ConfigError("unknown strategy '" + std::string(name) +
                    "' (expected finetune, lora, attn-qv, attn-mlp, layernorm, layernorm-simple or frozen)");
}

const std::vector<StrategyKind>& comparison_strategies() {
  static const std::vector<StrategyKind> kinds{StrategyKind::finetune, StrategyKind::lora,
                                               StrategyKind::attn_qv,  StrategyKind::attn_mlp,
                                               StrategyKind::layernorm, StrategyKind::layernorm_simple};
  return kinds;
}

TuningStrategy TuningStrategy::of(StrategyKind kind) {
  TuningStrategy s;
  s.kind = kind;
  s.include_defaults = kind != StrategyKind::layernorm_simple && kind != StrategyKind::frozen;
  return s;
}

void TuningStrategy::validate() const {
  if (kind == StrategyKind::lora && lora_rank < 1) throw ConfigError("strategy: lora_rank must be >= 1");
  if (kind == StrategyKind::layernorm_simple && include_defaults) {
    throw ConfigError("strategy: layernorm-simple cannot include the default-activated parameters");
  }
}

std::string TuningStrategy::label() const {
  std::string out(strategy_name(kind));
  if (kind == StrategyKind::lora) out += "(r=" + std::to_string(lora_rank) + ")";
  if (connector.has_value()) out += *connector ? "+connector" : "-connector";
  return out;
}

bool path_matches(std::string_view pattern, std::string_view path) {
  const auto pat = split(pattern);
  const auto segs = split(path);
  return segments_match(pat, segs);
}

std::vector<std::size_t> select_indices(const TuningStrategy& strategy, std::span<const PathInfo> params) {
  strategy.validate();
  std::vector<Rule> rules = llm_rules(strategy.kind);
  if (strategy.include_defaults) {
    rules.insert(rules.end(), default_rules().begin(), default_rules().end());
  }
  if (strategy.connector.value_or(strategy.include_defaults)) rules.push_back(kConnectorRule);

  std::vector<bool> chosen(params.size(), false);
  for (const auto& rule : rules) {
    bool hit = false;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (path_matches(rule.pattern, params[i].path)) {
        chosen[i] = true;
        hit = true;
      }
    }
    if (!hit && rule.required) {
      std::string msg = "strategy " + strategy.label() + ": pattern '" + std::string(rule.pattern) +
                        "' matches no parameter";
      if (strategy.kind == StrategyKind::lora) msg += " (inject adapters first)";
      throw SelectionError(msg);
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    if (chosen[i]) out.push_back(i);
  }
  return out;
}

template <Scalar T>
SelectionReport select_trainable(const TuningStrategy& strategy, ParamTree<T>& tree) {
  std::vector<PathInfo> infos;
  infos.reserve(tree.size());
  for (const auto& e : tree) infos.push_back({e.path, e.tensor.shape()});
  const auto picked = select_indices(strategy, infos);

  tree.freeze_all();
  SelectionReport report;
  for (std::size_t i : picked) {
    tree.set_trainable(infos[i].path, true);
    report.selected.push_back(infos[i].path);
  }
  report.trainable = tree.trainable_count();
  report.total = tree.total_count();
  report.fraction = report.total ? static_cast<double>(report.trainable) / static_cast<double>(report.total) : 0.0;
  return report;
}

template <Scalar T>
std::size_t count_paths(const ParamTree<T>& tree, std::span<const std::string> selected) {
  std::size_t n = 0;
  for (const auto& p : selected) n += tree.at(p).numel();
  return n;
}

std::vector<PathInfo> lora_adapter_inventory(std::span<const PathInfo> params, std::size_t rank,
                                             std::span<const std::string> targets) {
  std::vector<PathInfo> out;
  for (const auto& p : params) {
    bool matched = false;
    for (const auto& t : targets) matched = matched || path_matches(t, p.path);
    if (!matched) continue;
    if (p.shape.size() != 2) {
      throw SelectionError("lora: target '" + p.path + "' is not a 2-D weight " + shape_str(p.shape));
    }
    out.push_back({p.path + ".lora_A", {rank, p.shape[1]}});
    out.push_back({p.path + ".lora_B", {p.shape[0], rank}});
  }
  return out;
}

template <Scalar T>
std::vector<LoraAdapter<T>> inject_lora(ParamTree<T>& tree, std::size_t rank, std::uint64_t seed,
                                        std::span<const std::string> targets) {
  if (rank < 1) throw ConfigError("lora: rank must be >= 1");
  std::vector<PathInfo> infos;
  for (const auto& e : tree) {
    if (e.path.ends_with(".lora_A") || e.path.ends_with(".lora_B")) continue;
    infos.push_back({e.path, e.tensor.shape()});
  }
  const auto adapters = lora_adapter_inventory(infos, rank, targets);
  if (adapters.empty()) throw SelectionError("lora: target patterns match no weight");
  for (const auto& a : adapters) {
    if (tree.contains(a.path)) throw SelectionError("lora: '" + a.path + "' is already injected");
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.02);
  std::vector<LoraAdapter<T>> out;
  for (std::size_t i = 0; i < adapters.size(); i += 2) {
    const std::string target = adapters[i].path.substr(0, adapters[i].path.size() - 7);
    std::vector<T> a_data(numel(adapters[i].shape));
    for (T& v : a_data) v = static_cast<T>(dist(rng));
    LoraAdapter<T> adapter{target, Tensor<T>(adapters[i].shape, std::move(a_data)),
                           Tensor<T>::zeros(adapters[i + 1].shape), kLoraScaling};
    tree.set_trainable(target, false);
    tree.add(adapters[i].path, adapter.a, true);
    tree.add(adapters[i + 1].path, adapter.b, true);
    out.push_back(std::move(adapter));
  }
  return out;
}

template <Scalar T>
void merge_lora(ParamTree<T>& tree, std::span<const LoraAdapter<T>> adapters) {
  for (const auto& ad : adapters) {
    if (!tree.contains(ad.target + ".lora_A")) {
      throw SelectionError("lora: adapter for '" + ad.target + "' is not registered (already merged?)");
    }
  }
  for (const auto& ad : adapters) {
    Tensor<T>& w = tree.at(ad.target);
    const std::size_t out = w.dim(0), in = w.dim(1), rank = ad.a.dim(0);
    auto wd = w.data();
    auto a = ad.a.data();
    auto b = ad.b.data();
    for (std::size_t i = 0; i < out; ++i) {
      for (std::size_t j = 0; j < in; ++j) {
        double s = 0.0;
        for (std::size_t r = 0; r < rank; ++r) s += static_cast<double>(b[i * rank + r]) * a[r * in + j];
        wd[i * in + j] += static_cast<T>(ad.scaling * s);
      }
    }
    tree.remove(ad.target + ".lora_A");
    tree.remove(ad.target + ".lora_B");
  }
}

template SelectionReport select_trainable<float>(const TuningStrategy&, ParamTree<float>&);
template SelectionReport select_trainable<double>(const TuningStrategy&, ParamTree<double>&);
template std::size_t count_paths<float>(const ParamTree<float>&, std::span<const std::string>);
template std::size_t count_paths<double>(const ParamTree<double>&, std::span<const std::string>);
template std::vector<LoraAdapter<float>> inject_lora<float>(ParamTree<float>&, std::size_t, std::uint64_t,
                                                            std::span<const std::string>);
template std::vector<LoraAdapter<double>> inject_lora<double>(ParamTree<double>&, std::size_t, std::uint64_t,
                                                              std::span<const std::string>);
template void merge_lora<float>(ParamTree<float>&, std::span<const LoraAdapter<float>>);
template void merge_lora<double>(ParamTree<double>&, std::span<const LoraAdapter<double>>);

}  // namespace normadapt
