#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "normadapt/analysis.hpp"
#include "normadapt/data.hpp"
#include "normadapt/peft.hpp"

namespace normadapt::harness {

/// Steps spent ramping up: floor(warmup_ratio * total).
std::size_t warmup_steps(std::size_t total, double warmup_ratio);

/// Linear warmup to base_lr, then cosine decay to 0 at step == total.
/// Throws ConfigError when step > total.
double lr_schedule(std::size_t step, std::size_t total, double warmup_ratio, double base_lr);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

/// Adam with decoupled weight decay. Moments are kept in double.
template <Scalar T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Updates every trainable entry of `tree` that carries a gradient.
  void step(ParamTree<T>& tree, double lr);
  std::size_t steps_taken() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamConfig config_;
  std::size_t t_ = 0;
  std::unordered_map<std::string, Moments> state_;
};

struct TrainConfig {
  double lr = 1e-3;
  std::size_t steps = 500;
  std::size_t batch = 32;
  double warmup_ratio = 0.03;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  std::size_t eval_interval = 0;  // 0: evaluate once at the end
  bool trace_norm_grads = false;
  std::size_t trace_interval = 1;

  void validate() const;
};

struct EvalPoint {
  std::size_t step = 0;
  double loss = 0.0;
};

struct RunRecord {
  std::string label;
  TrainConfig config;
  SelectionReport selection;
  std::vector<double> train_loss;
  std::vector<double> lrs;
  std::vector<EvalPoint> evals;
  double final_eval = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;
  bool aborted = false;
  std::string abort_reason;
  analysis::GradTrace trace;
  std::map<std::string, std::string> artifacts;
};

/// Mean cross-entropy over every scored token of `ds`.
template <Scalar T>
double evaluate(const Model<T>& model, const data::Dataset& ds, std::size_t batch = 128);

/// Selects the strategy's parameters (injecting LoRA adapters first when
/// needed) and runs Adam on `train_set`. A non-finite loss stops the run and
/// is reported through RunRecord::aborted.
template <Scalar T>
RunRecord train(Model<T>& model, const TuningStrategy& strategy, const data::Dataset& train_set,
                const data::Dataset* eval_set, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Staged experiments: text pretraining, connector alignment, then a strategy.

struct ExperimentConfig {
  std::string preset = "toy";
  ModelConfig model;
  data::TaskSpec task;  // mm-adapt template; split seeds are derived per run
  data::Mixture pretrain_mixture;
  std::size_t n_pretrain = 8000;
  std::size_t n_train = 2000;
  std::size_t n_eval = 512;
  std::size_t pretrain_steps = 2000;
  double pretrain_lr = 1e-3;
  std::size_t connector_steps = 300;
  double connector_lr = 2e-3;
  TrainConfig adapt;
  // Per-strategy learning rates keyed by TuningStrategy::label().
  std::map<std::string, double> tuned_lr;

  double lr_for(const TuningStrategy& s) const;
  void validate() const;
};

/// "toy" (the documented default architecture) or "quick" (the small
/// configuration used by the acceptance run).
ExperimentConfig experiment_preset(std::string_view name);

template <Scalar T>
struct StagedBase {
  Model<T> model;
  data::Dataset train;
  data::Dataset eval;
  double pretrain_loss = 0.0;   // last training loss of the text stage
  double connector_loss = 0.0;  // held-out loss after connector alignment
  std::uint64_t seed = 0;
};

template <Scalar T>
StagedBase<T> prepare_base(const ExperimentConfig& config, std::uint64_t seed);

/// Stage 2 on a copy of the base model.
template <Scalar T>
RunRecord adapt(const ExperimentConfig& config, const StagedBase<T>& base, const TuningStrategy& strategy,
                double lr, Model<T>* out_model = nullptr);

const std::vector<double>& reference_lr_grid();
/// "paper-grid" or a comma-separated list of learning rates.
std::vector<double> parse_lr_grid(std::string_view text);

struct SweepRow {
  double lr = 0.0;
  double eval_loss = 0.0;  // +inf for aborted runs
};

struct SweepResult {
  std::vector<SweepRow> rows;
  double best_lr = 0.0;
  double best_loss = 0.0;
};

/// Lowest loss wins; ties go to the smaller learning rate.
SweepResult pick_best(std::vector<SweepRow> rows);

SweepResult sweep_lr(const ExperimentConfig& config, const TuningStrategy& strategy, std::span<const double> grid,
                     std::uint64_t seed);

double adaptation_gain(double frozen_loss, double strategy_loss, double finetune_loss);

struct CompareRow {
  std::string label;
  double lr = 0.0;
  std::vector<double> eval_loss;  // per seed
  std::vector<double> gain;       // per seed
  double median_loss = 0.0;
  double median_gain = 0.0;
  std::size_t trainable = 0;
  double trainable_fraction = 0.0;
  std::vector<std::string> selected;
  double wall_seconds = 0.0;
};

struct CompareReport {
  std::vector<std::uint64_t> seeds;
  std::vector<double> frozen_loss;
  std::vector<double> finetune_loss;
  std::vector<CompareRow> rows;

  const CompareRow& row(std::string_view label) const;
};

/// Every strategy on the same per-seed base. Finetune is always trained as
/// the gain reference even when it is not among `strategies`.
CompareReport compare_strategies(const ExperimentConfig& config, std::span<const TuningStrategy> strategies,
                                 std::span<const std::uint64_t> seeds);

double median(std::vector<double> v);

std::string metrics_csv(const RunRecord& r);
std::string run_json(const RunRecord& r);
std::string sweep_csv(const SweepResult& s);
std::string compare_csv(const CompareReport& c);
std::string compare_json(const CompareReport& c);

}  // namespace normadapt::harness
