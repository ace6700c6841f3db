#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "normadapt/model.hpp"

namespace normadapt::analysis {

struct ProbeInfo {
  std::string dataset = "mm-adapt";
  std::size_t batch = 64;
  std::uint64_t seed = 17;
};

struct SimilarityReport {
  std::size_t layers = 0;
  std::vector<double> matrix;  // layers x layers, row-major
  double average = 0.0;        // strict upper triangle
  ProbeInfo probe;

  double at(std::size_t i, std::size_t j) const { return matrix[i * layers + j]; }
};

/// Cosine matrix of the given per-layer vectors. Throws Error naming the
/// first layer whose vector has zero norm.
SimilarityReport similarity_from_representations(const std::vector<std::vector<double>>& reps,
                                                 ProbeInfo probe = {});

/// Mean-pools every block output over batch and positions, then compares layers.
template <Scalar T>
SimilarityReport layer_similarity(const Model<T>& model, const TokenBatch& tokens,
                                  const std::type_identity_t<Tensor<T>>* visual, ProbeInfo probe = {});

struct GradRecord {
  std::int64_t step = 0;
  std::string path;
  double mean = 0.0;
  double variance = 0.0;  // population
  std::vector<std::uint64_t> histogram;
};

struct GradTrace {
  double range_lo = -0.01;
  double range_hi = 0.01;
  std::size_t bins = 64;
  std::vector<GradRecord> records;

  std::size_t step_count() const;
  std::size_t bin_of(double v) const;  // clamps to the edge bins
};

/// Appends one record per path for `step`; steps must strictly increase.
template <Scalar T>
void record_grad_stats(GradTrace& trace, std::int64_t step, const ParamTree<T>& tree,
                       std::span<const std::string> paths);

struct SimilarityComparison {
  std::string label_a, label_b;
  double average_a = 0.0, average_b = 0.0;
  double relative_difference = 0.0;  // (a - b) / a
};

std::vector<SimilarityComparison> compare_similarity(std::span<const SimilarityReport> runs,
                                                     std::span<const std::string> labels);

// Published layer-similarity averages (finetune, layernorm) for three models.
struct PublishedSimilarity {
  std::string model;
  double finetune;
  double layernorm;
};
const std::vector<PublishedSimilarity>& published_similarity();

/// Mean over published rows of (finetune - layernorm) / finetune.
double published_mean_relative_drop();

std::string similarity_csv(const SimilarityReport& r);
std::string similarity_json(const SimilarityReport& r);
std::string grad_trace_csv(const GradTrace& t);

}  // namespace normadapt::analysis
