#include "normadapt/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

namespace normadapt::harness {

std::size_t warmup_steps(std::size_t total, double warmup_ratio) {
  return static_cast<std::size_t>(std::floor(warmup_ratio * static_cast<double>(total)));
}

double lr_schedule(std::size_t step, std::size_t total, double warmup_ratio, double base_lr) {
  if (step > total) {
    throw ConfigError("lr_schedule: step " + std::to_string(step) + " is past total " + std::to_string(total));
  }
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) throw ConfigError("lr_schedule: warmup_ratio must be in [0, 1)");
  const std::size_t warm = warmup_steps(total, warmup_ratio);
  if (step < warm) return base_lr * static_cast<double>(step) / static_cast<double>(warm);
  if (total == warm) return base_lr;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(total - warm);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <Scalar T>
void Adam<T>::step(ParamTree<T>& tree, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (auto& e : tree) {
    Tensor<T>& p = e.tensor;
    if (!p.requires_grad() || !p.has_grad()) continue;
    auto& st = state_[e.path];
    if (st.m.empty()) {
      st.m.assign(p.numel(), 0.0);
      st.v.assign(p.numel(), 0.0);
    }
    auto g = p.grad();
    auto w = p.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      st.m[i] = config_.beta1 * st.m[i] + (1.0 - config_.beta1) * gi;
      st.v[i] = config_.beta2 * st.v[i] + (1.0 - config_.beta2) * gi * gi;
      const double update = (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + config_.eps) +
                            config_.weight_decay * static_cast<double>(w[i]);
      w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * update);
    }
  }
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train: lr must be a finite non-negative number");
  if (batch == 0) throw ConfigError("train: batch must be positive");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) throw ConfigError("train: warmup_ratio must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be non-negative");
  if (trace_interval == 0) throw ConfigError("train: trace_interval must be positive");
}

namespace {

template <Scalar T>
Tensor<T> logits_for(Tape<T>& tape, const Model<T>& model, const data::Batch<T>& b) {
  return b.visual.defined() ? model.forward(tape, b.tokens, b.visual) : model.forward(tape, b.tokens);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <Scalar T>
bool has_lora(const ParamTree<T>& t) {
  for (const auto& e : t) {
    if (e.path.ends_with(".lora_A")) return true;
  }
  return false;
}

}  // namespace

template <Scalar T>
double evaluate(const Model<T>& model, const data::Dataset& ds, std::size_t batch) {
  double total = 0.0;
  std::size_t counted = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.samples.size(); start += batch) {
    idx.resize(std::min(batch, ds.samples.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto b = data::make_batch<T>(ds, idx);
    const std::size_t n = std::count_if(b.targets.begin(), b.targets.end(),
                                        [](std::int64_t t) { return t != kIgnoreIndex; });
    if (n == 0) continue;
    Tape<T> tape;
    const auto loss = ops::cross_entropy(tape, logits_for(tape, model, b), b.targets);
    total += static_cast<double>(loss.item()) * static_cast<double>(n);
    counted += n;
  }
  if (counted == 0) throw Error("evaluate: dataset has no scored tokens");
  return total / static_cast<double>(counted);
}

template <Scalar T>
RunRecord train(Model<T>& model, const TuningStrategy& strategy, const data::Dataset& train_set,
                const data::Dataset* eval_set, const TrainConfig& config) {
  config.validate();
  if (train_set.samples.empty()) throw ConfigError("train: empty training set");
  const auto t0 = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.label = strategy.label();
  rec.config = config;
  if (strategy.kind == StrategyKind::lora && !has_lora(model.params())) {
    inject_lora(model.params(), strategy.lora_rank, config.seed ^ 0x10a4ULL);
  }
  rec.selection = select_trainable(strategy, model.params());

  std::vector<std::string> traced;
  if (config.trace_norm_grads) {
    for (const auto& p : rec.selection.selected) {
      if (p.find("norm") != std::string::npos) traced.push_back(p);
    }
  }

  Adam<T> opt(AdamConfig{0.9, 0.999, 1e-8, config.weight_decay});
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_set.samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::vector<std::size_t> idx(config.batch);

  for (std::size_t step = 0; step < config.steps; ++step) {
    for (auto& i : idx) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      i = order[cursor++];
    }
    const double lr = lr_schedule(step, config.steps, config.warmup_ratio, config.lr);
    const auto b = data::make_batch<T>(train_set, idx);
    Tape<T> tape;
    const auto loss = ops::cross_entropy(tape, logits_for(tape, model, b), b.targets);
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) {
      rec.aborted = true;
      rec.abort_reason = "non-finite training loss at step " + std::to_string(step);
      break;
    }
    tape.backward(loss);
    if (!traced.empty() && step % config.trace_interval == 0) {
      analysis::record_grad_stats(rec.trace, static_cast<std::int64_t>(step), model.params(), traced);
    }
    opt.step(model.params(), lr);
    model.params().zero_grad();
    rec.train_loss.push_back(value);
    rec.lrs.push_back(lr);
    if (eval_set && config.eval_interval && (step + 1) % config.eval_interval == 0 && step + 1 < config.steps) {
      rec.evals.push_back({step + 1, evaluate(model, *eval_set)});
    }
  }
  if (eval_set && !rec.aborted) {
    rec.final_eval = evaluate(model, *eval_set);
    rec.evals.push_back({rec.train_loss.size(), rec.final_eval});
  }
  rec.wall_seconds = seconds_since(t0);
  return rec;
}

// ---------------------------------------------------------------------------

double ExperimentConfig::lr_for(const TuningStrategy& s) const {
  const auto it = tuned_lr.find(s.label());
  return it == tuned_lr.end() ? adapt.lr : it->second;
}

void ExperimentConfig::validate() const {
  model.validate();
  task.mixture.validate();
  pretrain_mixture.validate();
  adapt.validate();
  if (n_pretrain == 0 || n_train == 0 || n_eval == 0) throw ConfigError("experiment: split sizes must be positive");
  if (model.n_visual_tokens != task.n_attributes) {
    throw ConfigError("experiment: the model needs one visual token per attribute");
  }
}

ExperimentConfig experiment_preset(std::string_view name) {
  ExperimentConfig c;
  c.preset = std::string(name);
  c.task.kind = data::TaskKind::mm_adapt;
  c.task.n_attributes = 4;
  c.task.n_values = 8;
  c.task.vision = VisionMode::aligned;
  if (name == "toy") {
    c.model.n_layers = 4;
    c.model.d_model = 128;
    c.model.n_heads = 4;
    c.model.d_ff = 512;
    c.task.d_visual = 64;
    c.pretrain_steps = 2000;
    c.adapt.steps = 500;
    c.adapt.batch = 32;
  } else if (name == "quick") {
    c.model.n_layers = 2;
    c.model.d_model = 32;
    c.model.n_heads = 2;
    c.model.d_ff = 64;
    c.task.d_visual = 32;
    c.n_pretrain = 4000;
    c.n_train = 1000;
    c.n_eval = 256;
    c.pretrain_steps = 1500;
    c.pretrain_lr = 3e-3;
    c.connector_steps = 150;
    c.adapt.steps = 300;
    c.adapt.batch = 32;
    // Best of {1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4} on a held-out sweep seed (100).
    c.tuned_lr = {{"finetune", 1e-3}, {"lora(r=32)", 1e-3},      {"attn-qv", 1e-3},
                  {"attn-mlp", 1e-3}, {"layernorm", 1e-3}, {"layernorm-simple", 1e-1}};
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "' (expected toy or quick)");
  }
  data::fit_model_to_task(c.model, c.task);
  c.adapt.lr = 1e-3;
  return c;
}

template <Scalar T>
StagedBase<T> prepare_base(const ExperimentConfig& config, std::uint64_t seed) {
  config.validate();
  ModelConfig mc = config.model;
  data::fit_model_to_task(mc, config.task);

  data::TaskSpec text = config.task;
  text.kind = data::TaskKind::text_pretrain;
  text.mixture = config.pretrain_mixture;
  text.n_samples = config.n_pretrain;
  text.seed = seed * 1000 + 1;
  data::TaskSpec train_spec = config.task;
  train_spec.n_samples = config.n_train;
  train_spec.seed = seed * 1000 + 2;
  data::TaskSpec eval_spec = config.task;
  eval_spec.n_samples = config.n_eval;
  eval_spec.seed = seed * 1000 + 3;

  StagedBase<T> base{Model<T>::build(mc, seed), data::generate(train_spec), data::generate(eval_spec), 0.0, 0.0,
                     seed};
  const auto text_set = data::generate(text);

  TrainConfig stage0 = config.adapt;
  stage0.lr = config.pretrain_lr;
  stage0.steps = config.pretrain_steps;
  stage0.seed = seed * 1000 + 11;
  stage0.eval_interval = 0;
  stage0.trace_norm_grads = false;
  TuningStrategy lm = TuningStrategy::of(StrategyKind::finetune);
  lm.connector = false;  // the text stage never reads the connector
  auto r0 = train(base.model, lm, text_set, nullptr, stage0);
  if (r0.aborted) throw NonFiniteLossError("pretraining: " + r0.abort_reason);
  base.pretrain_loss = r0.train_loss.empty() ? 0.0 : r0.train_loss.back();

  TrainConfig stage1 = stage0;
  stage1.lr = config.connector_lr;
  stage1.steps = config.connector_steps;
  stage1.seed = seed * 1000 + 12;
  TuningStrategy conn = TuningStrategy::of(StrategyKind::frozen);
  conn.connector = true;
  auto r1 = train(base.model, conn, base.train, &base.eval, stage1);
  if (r1.aborted) throw NonFiniteLossError("connector alignment: " + r1.abort_reason);
  base.connector_loss = r1.final_eval;
  base.model.params().freeze_all();
  return base;
}

template <Scalar T>
RunRecord adapt(const ExperimentConfig& config, const StagedBase<T>& base, const TuningStrategy& strategy,
                double lr, Model<T>* out_model) {
  Model<T> model = base.model.clone();
  TrainConfig tc = config.adapt;
  tc.lr = lr;
  tc.seed = base.seed * 1000 + 21;
  RunRecord rec;
  if (strategy.kind == StrategyKind::frozen && !strategy.connector.value_or(false)) {
    // Nothing to train: the baseline is the aligned base model itself.
    rec.label = strategy.label();
    rec.config = tc;
    rec.selection = select_trainable(strategy, model.params());
    rec.final_eval = evaluate(model, base.eval);
    rec.evals.push_back({0, rec.final_eval});
  } else {
    rec = train(model, strategy, base.train, &base.eval, tc);
  }
  if (out_model) *out_model = std::move(model);
  return rec;
}

const std::vector<double>& reference_lr_grid() {
  static const std::vector<double> grid{2e-3, 1e-3, 6e-4, 3e-4, 1e-4, 5e-5, 2e-5, 1e-5, 6e-6, 1e-6, 1e-7};
  return grid;
}

std::vector<double> parse_lr_grid(std::string_view text) {
  if (text == "paper-grid") return reference_lr_grid();
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string part(text.substr(start, comma == std::string_view::npos ? text.npos : comma - start));
    try {
      out.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw ConfigError("lr grid: '" + part + "' is not a number");
    }
    if (!(out.back() >= 0.0)) throw ConfigError("lr grid: learning rates must be non-negative");
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

SweepResult pick_best(std::vector<SweepRow> rows) {
  if (rows.empty()) throw ConfigError("sweep: empty grid");
  SweepResult r;
  r.rows = std::move(rows);
  const SweepRow* best = &r.rows[0];
  for (const auto& row : r.rows) {
    if (row.eval_loss < best->eval_loss || (row.eval_loss == best->eval_loss && row.lr < best->lr)) best = &row;
  }
  r.best_lr = best->lr;
  r.best_loss = best->eval_loss;
  return r;
}

SweepResult sweep_lr(const ExperimentConfig& config, const TuningStrategy& strategy, std::span<const double> grid,
                     std::uint64_t seed) {
  if (grid.empty()) throw ConfigError("sweep: empty grid");
  const auto base = prepare_base<float>(config, seed);
  std::vector<SweepRow> rows;
  for (double lr : grid) {
    const auto rec = adapt(config, base, strategy, lr);
    rows.push_back({lr, rec.aborted ? std::numeric_limits<double>::infinity() : rec.final_eval});
  }
  return pick_best(std::move(rows));
}

double adaptation_gain(double frozen_loss, double strategy_loss, double finetune_loss) {
  const double denom = frozen_loss - finetune_loss;
  if (denom == 0.0) return strategy_loss == frozen_loss ? 0.0 : std::numeric_limits<double>::quiet_NaN();
  return (frozen_loss - strategy_loss) / denom;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

const CompareRow& CompareReport::row(std::string_view label) const {
  for (const auto& r : rows) {
    if (r.label == label) return r;
  }
  throw Error("compare: no row '" + std::string(label) + "'");
}

CompareReport compare_strategies(const ExperimentConfig& config, std::span<const TuningStrategy> strategies,
                                 std::span<const std::uint64_t> seeds) {
  if (strategies.empty() || seeds.empty()) throw ConfigError("compare: need at least one strategy and one seed");
  CompareReport report;
  report.seeds.assign(seeds.begin(), seeds.end());
  for (const auto& s : strategies) {
    CompareRow row;
    row.label = s.label();
    row.lr = config.lr_for(s);
    report.rows.push_back(row);
  }
  const TuningStrategy ft = TuningStrategy::of(StrategyKind::finetune);
  const TuningStrategy frozen = TuningStrategy::of(StrategyKind::frozen);
  for (std::uint64_t seed : seeds) {
    const auto base = prepare_base<float>(config, seed);
    const double frozen_loss = adapt(config, base, frozen, 0.0).final_eval;
    std::vector<RunRecord> runs;
    double ft_loss = std::numeric_limits<double>::quiet_NaN();
    for (const auto& s : strategies) {
      runs.push_back(adapt(config, base, s, config.lr_for(s)));
      if (s.label() == ft.label()) ft_loss = runs.back().final_eval;
    }
    if (std::isnan(ft_loss)) ft_loss = adapt(config, base, ft, config.lr_for(ft)).final_eval;
    report.frozen_loss.push_back(frozen_loss);
    report.finetune_loss.push_back(ft_loss);
    for (std::size_t i = 0; i < runs.size(); ++i) {
      auto& row = report.rows[i];
      const double loss = runs[i].aborted ? std::numeric_limits<double>::infinity() : runs[i].final_eval;
      row.eval_loss.push_back(loss);
      row.gain.push_back(adaptation_gain(frozen_loss, loss, ft_loss));
      row.trainable = runs[i].selection.trainable;
      row.trainable_fraction = runs[i].selection.fraction;
      row.selected = runs[i].selection.selected;
      row.wall_seconds += runs[i].wall_seconds;
    }
  }
  for (auto& row : report.rows) {
    row.median_loss = median(row.eval_loss);
    row.median_gain = median(row.gain);
  }
  return report;
}

// ---------------------------------------------------------------------------

std::string metrics_csv(const RunRecord& r) {
  std::ostringstream out;
  out.precision(9);
  out << "step,split,loss,lr\n";
  std::size_t e = 0;
  for (std::size_t s = 0; s < r.train_loss.size(); ++s) {
    out << s << ",train," << r.train_loss[s] << "," << r.lrs[s] << "\n";
    while (e < r.evals.size() && r.evals[e].step == s + 1) {
      const double lr = s + 1 < r.lrs.size() ? r.lrs[s + 1] : 0.0;
      out << s + 1 << ",eval," << r.evals[e].loss << "," << lr << "\n";
      ++e;
    }
  }
  for (; e < r.evals.size(); ++e) out << r.evals[e].step << ",eval," << r.evals[e].loss << ",0\n";
  return out.str();
}

namespace {

nlohmann::json train_config_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"steps", c.steps},
          {"batch", c.batch},
          {"warmup_ratio", c.warmup_ratio},
          {"weight_decay", c.weight_decay},
          {"seed", c.seed},
          {"eval_interval", c.eval_interval},
          {"trace_norm_grads", c.trace_norm_grads}};
}

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

std::string run_json(const RunRecord& r) {
  nlohmann::json j;
  j["label"] = r.label;
  j["config"] = train_config_json(r.config);
  j["selection"] = {{"selected", r.selection.selected},
                    {"trainable", r.selection.trainable},
                    {"total", r.selection.total},
                    {"fraction", r.selection.fraction}};
  j["train_loss"] = r.train_loss;
  nlohmann::json evals = nlohmann::json::array();
  for (const auto& e : r.evals) evals.push_back({{"step", e.step}, {"loss", e.loss}});
  j["eval"] = evals;
  j["final_eval"] = finite_or_null(r.final_eval);
  j["wall_seconds"] = r.wall_seconds;
  j["aborted"] = r.aborted;
  if (r.aborted) j["abort_reason"] = r.abort_reason;
  j["artifacts"] = r.artifacts;
  return j.dump(2) + "\n";
}

std::string sweep_csv(const SweepResult& s) {
  std::ostringstream out;
  out.precision(9);
  out << "lr,eval_loss,best\n";
  for (const auto& r : s.rows) out << r.lr << "," << r.eval_loss << "," << (r.lr == s.best_lr ? 1 : 0) << "\n";
  return out.str();
}

std::string compare_csv(const CompareReport& c) {
  std::ostringstream out;
  out.precision(6);
  out << "strategy,lr,median_eval_loss,median_gain,trainable,trainable_fraction,wall_seconds\n";
  for (const auto& r : c.rows) {
    out << r.label << "," << r.lr << "," << r.median_loss << "," << r.median_gain << "," << r.trainable << ","
        << r.trainable_fraction << "," << r.wall_seconds << "\n";
  }
  return out.str();
}

std::string compare_json(const CompareReport& c) {
  nlohmann::json j;
  j["seeds"] = c.seeds;
  nlohmann::json frozen = nlohmann::json::array(), ft = nlohmann::json::array();
  for (double v : c.frozen_loss) frozen.push_back(finite_or_null(v));
  for (double v : c.finetune_loss) ft.push_back(finite_or_null(v));
  j["frozen_loss"] = frozen;
  j["finetune_loss"] = ft;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : c.rows) {
    nlohmann::json losses = nlohmann::json::array(), gains = nlohmann::json::array();
    for (double v : r.eval_loss) losses.push_back(finite_or_null(v));
    for (double v : r.gain) gains.push_back(finite_or_null(v));
    rows.push_back({{"strategy", r.label},
                    {"lr", r.lr},
                    {"eval_loss", losses},
                    {"gain", gains},
                    {"median_eval_loss", finite_or_null(r.median_loss)},
                    {"median_gain", finite_or_null(r.median_gain)},
                    {"trainable", r.trainable},
                    {"trainable_fraction", r.trainable_fraction},
                    {"selected", r.selected},
                    {"wall_seconds", r.wall_seconds}});
  }
  j["rows"] = rows;
  return j.dump(2) + "\n";
}

template class Adam<float>;
template class Adam<double>;
template double evaluate<float>(const Model<float>&, const data::Dataset&, std::size_t);
template double evaluate<double>(const Model<double>&, const data::Dataset&, std::size_t);
template RunRecord train<float>(Model<float>&, const TuningStrategy&, const data::Dataset&, const data::Dataset*,
                                const TrainConfig&);
template RunRecord train<double>(Model<double>&, const TuningStrategy&, const data::Dataset&, const data::Dataset*,
                                 const TrainConfig&);
template StagedBase<float> prepare_base<float>(const ExperimentConfig&, std::uint64_t);
template StagedBase<double> prepare_base<double>(const ExperimentConfig&, std::uint64_t);
template RunRecord adapt<float>(const ExperimentConfig&, const StagedBase<float>&, const TuningStrategy&, double,
                                Model<float>*);
template RunRecord adapt<double>(const ExperimentConfig&, const StagedBase<double>&, const TuningStrategy&, double,
                                 Model<double>*);

}  // namespace normadapt::harness
