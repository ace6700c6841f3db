#include "normadapt/analysis.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

namespace normadapt::analysis {

SimilarityReport similarity_from_representations(const std::vector<std::vector<double>>& reps, ProbeInfo probe) {
  SimilarityReport r;
  r.layers = reps.size();
  r.probe = std::move(probe);
  if (reps.empty()) throw Error("similarity: no layers");
  std::vector<double> norms(reps.size());
  for (std::size_t i = 0; i < reps.size(); ++i) {
    if (reps[i].size() != reps[0].size()) throw ShapeError("similarity: layer " + std::to_string(i) + " width differs");
    double s = 0.0;
    for (double v : reps[i]) s += v * v;
    norms[i] = std::sqrt(s);
    if (norms[i] == 0.0) throw Error("similarity: layer " + std::to_string(i) + " representation has zero norm");
  }
  const std::size_t n = reps.size();
  r.matrix.assign(n * n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    r.matrix[i * n + i] = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < reps[i].size(); ++k) s += reps[i][k] * reps[j][k];
      const double c = std::clamp(s / (norms[i] * norms[j]), -1.0, 1.0);
      r.matrix[i * n + j] = c;
      r.matrix[j * n + i] = c;
      total += c;
    }
  }
  // One layer has no off-diagonal pair; report its self-similarity.
  r.average = n > 1 ? total / static_cast<double>(n * (n - 1) / 2) : 1.0;
  return r;
}

template <Scalar T>
SimilarityReport layer_similarity(const Model<T>& model, const TokenBatch& tokens,
                                  const std::type_identity_t<Tensor<T>>* visual, ProbeInfo probe) {
  if (tokens.batch == 0 || tokens.seq == 0) throw Error("similarity: empty probe batch");
  const auto outputs = model.capture_layer_outputs(tokens, visual);
  std::vector<std::vector<double>> reps;
  for (const auto& h : outputs) {
    const std::size_t rows = h.dim(0), d = h.dim(1);
    std::vector<double> pooled(d, 0.0);
    auto data = h.data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < d; ++k) pooled[k] += data[r * d + k];
    }
    for (double& v : pooled) v /= static_cast<double>(rows);
    reps.push_back(std::move(pooled));
  }
  return similarity_from_representations(reps, std::move(probe));
}

std::size_t GradTrace::step_count() const {
  std::set<std::int64_t> steps;
  for (const auto& r : records) steps.insert(r.step);
  return steps.size();
}

std::size_t GradTrace::bin_of(double v) const {
  if (!(v > range_lo)) return 0;
  if (v >= range_hi) return bins - 1;
  const auto b = static_cast<std::size_t>((v - range_lo) / (range_hi - range_lo) * static_cast<double>(bins));
  return std::min(b, bins - 1);
}

template <Scalar T>
void record_grad_stats(GradTrace& trace, std::int64_t step, const ParamTree<T>& tree,
                       std::span<const std::string> paths) {
  if (!trace.records.empty() && step <= trace.records.back().step) {
    throw Error("grad trace: step " + std::to_string(step) + " is not after " +
                std::to_string(trace.records.back().step));
  }
  if (trace.bins == 0 || !(trace.range_hi > trace.range_lo)) throw ConfigError("grad trace: bad histogram range");
  std::vector<GradRecord> fresh;
  for (const auto& path : paths) {
    const auto& t = tree.at(path);
    if (!t.has_grad()) throw Error("grad trace: '" + path + "' has no gradient");
    auto g = t.grad();
    GradRecord rec;
    rec.step = step;
    rec.path = path;
    rec.histogram.assign(trace.bins, 0);
    double s = 0.0;
    for (T v : g) s += static_cast<double>(v);
    rec.mean = s / static_cast<double>(g.size());
    double ss = 0.0;
    for (T v : g) {
      const double d = static_cast<double>(v) - rec.mean;
      ss += d * d;
      ++rec.histogram[trace.bin_of(static_cast<double>(v))];
    }
    rec.variance = ss / static_cast<double>(g.size());
    fresh.push_back(std::move(rec));
  }
  for (auto& r : fresh) trace.records.push_back(std::move(r));
}

std::vector<SimilarityComparison> compare_similarity(std::span<const SimilarityReport> runs,
                                                     std::span<const std::string> labels) {
  if (labels.size() != runs.size()) throw ConfigError("compare_similarity: one label per report");
  for (const auto& r : runs) {
    if (r.layers != runs[0].layers) {
      throw ShapeError("compare_similarity: layer counts differ (" + std::to_string(runs[0].layers) + " vs " +
                       std::to_string(r.layers) + ")");
    }
  }
  std::vector<SimilarityComparison> out;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    for (std::size_t j = i + 1; j < runs.size(); ++j) {
      SimilarityComparison c{labels[i], labels[j], runs[i].average, runs[j].average, 0.0};
      c.relative_difference = (c.average_a - c.average_b) / c.average_a;
      out.push_back(c);
    }
  }
  return out;
}

const std::vector<PublishedSimilarity>& published_similarity() {
  static const std::vector<PublishedSimilarity> rows{
      {"mm-vicuna", 0.624, 0.585}, {"mm-llama2", 0.591, 0.504}, {"mm-llama2-chat", 0.617, 0.550}};
  return rows;
}

double published_mean_relative_drop() {
  double s = 0.0;
  for (const auto& r : published_similarity()) s += (r.finetune - r.layernorm) / r.finetune;
  return s / static_cast<double>(published_similarity().size());
}

std::string similarity_csv(const SimilarityReport& r) {
  std::ostringstream out;
  out.precision(10);
  out << "layer";
  for (std::size_t j = 0; j < r.layers; ++j) out << "," << j;
  out << "\n";
  for (std::size_t i = 0; i < r.layers; ++i) {
    out << i;
    for (std::size_t j = 0; j < r.layers; ++j) out << "," << r.at(i, j);
    out << "\n";
  }
  return out.str();
}

std::string similarity_json(const SimilarityReport& r) {
  nlohmann::json j;
  j["layers"] = r.layers;
  j["average"] = r.average;
  j["probe"] = {{"dataset", r.probe.dataset}, {"batch", r.probe.batch}, {"seed", r.probe.seed}};
  return j.dump(2) + "\n";
}

std::string grad_trace_csv(const GradTrace& t) {
  std::ostringstream out;
  out.precision(10);
  out << "step,path,mean,variance\n";
  for (const auto& r : t.records) out << r.step << "," << r.path << "," << r.mean << "," << r.variance << "\n";
  return out.str();
}

template SimilarityReport layer_similarity<float>(const Model<float>&, const TokenBatch&, const Tensor<float>*,
                                                  ProbeInfo);
template SimilarityReport layer_similarity<double>(const Model<double>&, const TokenBatch&, const Tensor<double>*,
                                                   ProbeInfo);
template void record_grad_stats<float>(GradTrace&, std::int64_t, const ParamTree<float>&,
                                       std::span<const std::string>);
template void record_grad_stats<double>(GradTrace&, std::int64_t, const ParamTree<double>&,
                                        std::span<const std::string>);

}  // namespace normadapt::analysis
