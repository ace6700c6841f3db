// normadapt command line: training runs, sweeps, comparisons and analyses.

#include <CLI11.hpp>
#include <json.hpp>

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "normadapt/budget.hpp"
#include "normadapt/config.hpp"
#include "normadapt/kernels.hpp"
#include "normadapt/norm_math.hpp"
#include "normadapt/train.hpp"

namespace fs = std::filesystem;
using namespace normadapt;
using nlohmann::json;

namespace {

using Real = float;

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
}

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value

  RunConfig load() const {
    RunConfig rc = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      rc.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return rc;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "key = value config file");
  cmd->add_option("--set", c.overrides, "override one config key (key=value)");
}

std::vector<TuningStrategy> parse_strategy_list(const std::string& text, const RunConfig& rc) {
  std::vector<TuningStrategy> out;
  if (text == "all") {
    for (auto k : comparison_strategies()) out.push_back(TuningStrategy::of(k));
  } else if (text == "connector-ablation") {
    TuningStrategy both = TuningStrategy::of(StrategyKind::layernorm);
    TuningStrategy conn = TuningStrategy::of(StrategyKind::frozen);
    conn.connector = true;
    TuningStrategy ln = TuningStrategy::of(StrategyKind::layernorm);
    ln.connector = false;
    out = {both, conn, ln};
  } else {
    std::size_t start = 0;
    while (start <= text.size()) {
      const auto comma = text.find(',', start);
      out.push_back(parse_strategy_spec(text.substr(start, comma == std::string::npos ? text.npos : comma - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  for (auto& s : out) {
    if (rc.lora_rank) s.lora_rank = *rc.lora_rank;
    s.validate();
  }
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string part = text.substr(start, comma == std::string::npos ? text.npos : comma - start);
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ConfigError("seeds: '" + part + "' is not an integer");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------

int cmd_train(const Common& common, bool trace) {
  const RunConfig rc = common.load();
  auto cfg = to_experiment(rc);
  const auto strategy = to_strategy(rc);
  cfg.adapt.eval_interval = std::max<std::size_t>(1, cfg.adapt.steps / 10);
  cfg.adapt.trace_norm_grads = trace;
  const fs::path out = rc.outdir;
  fs::create_directories(out);
  write_file(out / "config.txt", rc.to_text());

  std::cerr << "preparing base model (preset " << cfg.preset << ", seed " << rc.seed << ")\n";
  auto base = harness::prepare_base<Real>(cfg, rc.seed);
  Model<Real> model = base.model.clone();
  auto rec = harness::adapt(cfg, base, strategy, cfg.lr_for(strategy), &model);

  rec.artifacts["metrics"] = (out / "metrics.csv").string();
  rec.artifacts["checkpoint"] = (out / "model.ckpt").string();
  write_file(out / "metrics.csv", harness::metrics_csv(rec));
  if (trace) {
    rec.artifacts["grad_stats"] = (out / "grad_stats.csv").string();
    write_file(out / "grad_stats.csv", analysis::grad_trace_csv(rec.trace));
  }
  save_checkpoint(model, (out / "model.ckpt").string());
  write_file(out / "run.json", harness::run_json(rec));
  if (rec.aborted) {
    std::cerr << "run aborted: " << rec.abort_reason << "\n";
    return 3;
  }
  std::cout << rec.label << " final eval loss " << rec.final_eval << " (" << rec.selection.trainable
            << " trainable)\n";
  return 0;
}

int cmd_sweep(const Common& common, const std::string& grid_text, const std::string& strategy_text) {
  RunConfig rc = common.load();
  if (!strategy_text.empty()) rc.set("strategy", strategy_text);
  const auto cfg = to_experiment(rc);
  const auto strategy = to_strategy(rc);
  const auto grid = harness::parse_lr_grid(grid_text);
  const auto result = harness::sweep_lr(cfg, strategy, grid, rc.seed);
  const fs::path out = rc.outdir;
  write_file(out / "sweep.csv", harness::sweep_csv(result));
  json j{{"strategy", strategy.label()}, {"best_lr", result.best_lr}, {"best_loss", result.best_loss}};
  write_file(out / "sweep.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_compare(const Common& common, const std::string& strategies, const std::string& seeds) {
  const RunConfig rc = common.load();
  const auto cfg = to_experiment(rc);
  const auto list = parse_strategy_list(strategies, rc);
  const auto seed_list = parse_seeds(seeds);
  const auto report = harness::compare_strategies(cfg, list, seed_list);
  const fs::path out = rc.outdir;
  write_file(out / "compare.csv", harness::compare_csv(report));
  write_file(out / "compare.json", harness::compare_json(report));
  std::cout << harness::compare_csv(report);
  return 0;
}

int cmd_budget(const std::string& preset, const std::string& strategy_text, const std::string& precision,
               std::size_t lora_rank, bool table2) {
  if (table2) {
    std::cout << budget::table2_csv(budget::table2_reproduction());
    return 0;
  }
  auto strategy = parse_strategy_spec(strategy_text);
  strategy.lora_rank = lora_rank;
  strategy.validate();
  const auto report = budget::count(budget::preset_by_name(preset), strategy, budget::precision_from_name(precision));
  std::cout << budget::report_json(report) << "\n";
  return 0;
}

// Probe batch drawn from the mm-adapt task the model was trained on.
data::Batch<Real> probe_batch(const harness::ExperimentConfig& cfg, const analysis::ProbeInfo& probe) {
  data::TaskSpec spec = cfg.task;
  spec.n_samples = probe.batch;
  spec.seed = probe.seed;
  const auto ds = data::generate(spec);
  std::vector<std::size_t> idx(ds.samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return data::make_batch<Real>(ds, idx);
}

int cmd_similarity(const Common& common, const std::vector<std::string>& checkpoints, std::string strategies,
                   std::size_t probe_batch_size, std::uint64_t probe_seed) {
  const RunConfig rc = common.load();
  const auto cfg = to_experiment(rc);
  analysis::ProbeInfo probe;
  probe.batch = probe_batch_size;
  probe.seed = probe_seed;
  const auto batch = probe_batch(cfg, probe);

  std::vector<analysis::SimilarityReport> reports;
  std::vector<std::string> labels;
  if (!checkpoints.empty()) {
    for (const auto& path : checkpoints) {
      const auto model = load_checkpoint<Real>(path);
      if (model.config().vocab_size != cfg.model.vocab_size || model.config().d_visual != cfg.model.d_visual) {
        throw ConfigError("similarity: checkpoint '" + path + "' does not match the task of preset " + cfg.preset);
      }
      reports.push_back(analysis::layer_similarity(model, batch.tokens, &batch.visual, probe));
      labels.push_back(fs::path(path).parent_path().filename().string());
    }
  } else {
    if (strategies.empty()) strategies = "finetune,layernorm";
    const auto list = parse_strategy_list(strategies, rc);
    std::cerr << "preparing base model (preset " << cfg.preset << ", seed " << rc.seed << ")\n";
    const auto base = harness::prepare_base<Real>(cfg, rc.seed);
    for (const auto& s : list) {
      Model<Real> model = base.model.clone();
      harness::adapt(cfg, base, s, cfg.lr_for(s), &model);
      reports.push_back(analysis::layer_similarity(model, batch.tokens, &batch.visual, probe));
      labels.push_back(s.label());
    }
  }

  const fs::path out = rc.outdir;
  json summary;
  summary["runs"] = json::array();
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const std::string name = "similarity_" + std::to_string(i) + ".csv";
    write_file(out / name, analysis::similarity_csv(reports[i]));
    json r = json::parse(analysis::similarity_json(reports[i]));
    r["label"] = labels[i];
    r["matrix_csv"] = (out / name).string();
    summary["runs"].push_back(r);
  }
  if (reports.size() >= 2) {
    summary["comparisons"] = json::array();
    for (const auto& c : analysis::compare_similarity(reports, labels)) {
      summary["comparisons"].push_back({{"a", c.label_a},
                                        {"b", c.label_b},
                                        {"average_a", c.average_a},
                                        {"average_b", c.average_b},
                                        {"relative_difference", c.relative_difference}});
    }
    summary["published_mean_relative_drop"] = analysis::published_mean_relative_drop();
  }
  write_file(out / "similarity.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_grad_stats(const Common& common, const std::string& strategies, std::size_t interval) {
  const RunConfig rc = common.load();
  auto cfg = to_experiment(rc);
  cfg.adapt.trace_norm_grads = true;
  cfg.adapt.trace_interval = interval;
  const auto list = parse_strategy_list(strategies, rc);
  std::cerr << "preparing base model (preset " << cfg.preset << ", seed " << rc.seed << ")\n";
  const auto base = harness::prepare_base<Real>(cfg, rc.seed);
  const fs::path out = rc.outdir;
  json summary = json::array();
  for (const auto& s : list) {
    const auto rec = harness::adapt(cfg, base, s, cfg.lr_for(s));
    std::string file = "grad_stats_" + s.label() + ".csv";
    for (char& ch : file) {
      if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '.' && ch != '_') ch = '_';
    }
    write_file(out / file, analysis::grad_trace_csv(rec.trace));
    summary.push_back({{"strategy", s.label()},
                       {"csv", (out / file).string()},
                       {"records", rec.trace.records.size()},
                       {"steps", rec.trace.step_count()}});
  }
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_normcheck(std::size_t n, std::size_t trials, std::uint64_t seed, const std::string& grid_text,
                  const std::string& sampler_text, std::size_t scaling_trials, const std::string& scaling_csv) {
  using namespace norm_math;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  double worst_idem = 0, worst_sym = 0, worst_ones = 0, worst_y = 0;
  double worst_mean = 0, worst_dot1 = 0, worst_doty = 0;
  std::size_t violations = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<double> x(n), b(n);
    for (auto& v : x) v = gauss(rng);
    for (auto& v : b) v = gauss(rng);
    const auto inst = ln_stats(x);
    if (t < 20) {
      const auto d = check_projection(inst);
      worst_idem = std::max(worst_idem, d.idempotency_defect);
      worst_sym = std::max(worst_sym, d.symmetry_defect);
      worst_ones = std::max(worst_ones, d.ones_residual);
      worst_y = std::max(worst_y, d.y_residual);
    }
    const auto rec = variance_bound_check(inst, b);
    worst_mean = std::max(worst_mean, std::abs(rec.mean_a));
    worst_dot1 = std::max(worst_dot1, std::abs(rec.dot_a_ones));
    worst_doty = std::max(worst_doty, std::abs(rec.dot_a_y));
    if (!rec.holds) ++violations;
  }

  std::vector<std::size_t> grid;
  std::size_t start = 0;
  while (start <= grid_text.size()) {
    const auto comma = grid_text.find(',', start);
    grid.push_back(std::stoul(grid_text.substr(start, comma == std::string::npos ? grid_text.npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  const auto study = variance_scaling_study(grid, sampler_from_name(sampler_text), scaling_trials, seed);
  std::string csv = "N,variance\n";
  char buf[64];
  for (const auto& r : study.rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", r.n, r.variance);
    csv += buf;
  }
  if (!scaling_csv.empty()) write_file(scaling_csv, csv);

  json j{{"n", n},
         {"trials", trials},
         {"seed", seed},
         {"projection",
          {{"max_idempotency_defect", worst_idem},
           {"max_symmetry_defect", worst_sym},
           {"max_ones_residual", worst_ones},
           {"max_y_residual", worst_y}}},
         {"gradient",
          {{"max_abs_mean", worst_mean}, {"max_abs_dot_ones", worst_dot1}, {"max_abs_dot_y", worst_doty}}},
         {"bound_violations", violations},
         {"scaling",
          {{"sampler", std::string(sampler_name(study.sampler))},
           {"trials", scaling_trials},
           {"loglog_slope", study.loglog_slope},
           {"strictly_decreasing", study.strictly_decreasing},
           {"csv", scaling_csv}}}};
  std::cout << j.dump(2) << "\n";
  return violations == 0 ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
  kernels::configure_threads_from_env();
  CLI::App app{"normadapt: normalization-layer tuning experiments"};
  app.require_subcommand(1);

  Common c_train, c_sweep, c_compare, c_sim, c_grad;

  bool trace = false;
  auto* train = app.add_subcommand("train", "adapt one strategy; writes metrics.csv, run.json, model.ckpt");
  add_common(train, c_train);
  train->add_flag("--trace-grads", trace, "also write grad_stats.csv for trained norm parameters");

  std::string grid = "paper-grid", sweep_strategy;
  auto* sweep = app.add_subcommand("sweep-lr", "learning-rate sweep for one strategy");
  add_common(sweep, c_sweep);
  sweep->add_option("--grid", grid, "paper-grid or comma-separated learning rates");
  sweep->add_option("--strategy", sweep_strategy, "overrides the config strategy");

  std::string cmp_strategies = "all", cmp_seeds = "1,2,3";
  auto* compare = app.add_subcommand("compare", "all strategies on shared bases, gains against finetune");
  add_common(compare, c_compare);
  compare->add_option("--strategies", cmp_strategies, "all, connector-ablation or a comma-separated list");
  compare->add_option("--seeds", cmp_seeds, "comma-separated base seeds");

  std::string b_preset = "llama7b", b_strategy = "layernorm", b_precision = "fp32";
  std::size_t b_rank = 32;
  bool b_table2 = false;
  auto* bud = app.add_subcommand("budget", "analytic trainable-parameter counts");
  bud->add_option("--preset", b_preset, "llama7b or llama13b");
  bud->add_option("--strategy", b_strategy);
  bud->add_option("--precision", b_precision, "fp32 or bf16");
  bud->add_option("--lora-rank", b_rank);
  bud->add_flag("--table2", b_table2, "CSV of every preset and strategy against published percentages");

  std::vector<std::string> sim_ckpts;
  std::string sim_strategies;
  std::size_t sim_batch = 64;
  std::uint64_t sim_seed = 17;
  auto* sim = app.add_subcommand("similarity", "cross-layer cosine similarity of block outputs");
  add_common(sim, c_sim);
  sim->add_option("--checkpoint", sim_ckpts, "model.ckpt files; otherwise strategies are trained");
  sim->add_option("--strategies", sim_strategies, "default finetune,layernorm");
  sim->add_option("--probe-batch", sim_batch);
  sim->add_option("--probe-seed", sim_seed);

  std::string gs_strategies = "finetune,layernorm";
  std::size_t gs_interval = 1;
  auto* gs = app.add_subcommand("grad-stats", "per-step gradient statistics of norm parameters");
  add_common(gs, c_grad);
  gs->add_option("--strategies", gs_strategies);
  gs->add_option("--interval", gs_interval, "record every k-th step");

  std::size_t nc_n = 64, nc_trials = 1000, nc_scaling_trials = 200;
  std::uint64_t nc_seed = 0;
  std::string nc_grid = "16,32,64,128,256,512,1024", nc_sampler = "mean-pooled", nc_csv;
  auto* nc = app.add_subcommand("normcheck", "numerical checks of the normalization gradient algebra");
  nc->add_option("--n", nc_n, "feature dimension");
  nc->add_option("--trials", nc_trials);
  nc->add_option("--seed", nc_seed);
  nc->add_option("--grid", nc_grid, "N values for the scaling study");
  nc->add_option("--sampler", nc_sampler, "iid, mean-pooled or y-only");
  nc->add_option("--scaling-trials", nc_scaling_trials);
  nc->add_option("--scaling-csv", nc_csv, "write the (N, variance) table here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(c_train, trace);
    if (*sweep) return cmd_sweep(c_sweep, grid, sweep_strategy);
    if (*compare) return cmd_compare(c_compare, cmp_strategies, cmp_seeds);
    if (*bud) return cmd_budget(b_preset, b_strategy, b_precision, b_rank, b_table2);
    if (*sim) return cmd_similarity(c_sim, sim_ckpts, sim_strategies, sim_batch, sim_seed);
    if (*gs) return cmd_grad_stats(c_grad, gs_strategies, gs_interval);
    if (*nc) return cmd_normcheck(nc_n, nc_trials, nc_seed, nc_grid, nc_sampler, nc_scaling_trials, nc_csv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
