#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "normadapt/analysis.hpp"

using namespace normadapt;
using namespace normadapt::analysis;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.n_layers = 4;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.vocab_size = 20;
  c.max_seq = 16;
  c.n_visual_tokens = 2;
  c.d_visual = 6;
  return c;
}

TokenBatch probe_tokens(std::size_t batch, std::size_t seq, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int64_t> d(0, 19);
  TokenBatch t{batch, seq, std::vector<std::int64_t>(batch * seq)};
  for (auto& id : t.ids) id = d(rng);
  return t;
}

}  // namespace

TEST_CASE("identity blocks give an all-ones matrix") {
  auto model = Model<double>::build(small_config(), 1);
  for (std::size_t i = 0; i < 4; ++i) {
    for (const char* p : {"attn.o_proj.weight", "mlp.fc2.weight"}) {
      for (double& v : model.params().at(paths::block(i, p)).data()) v = 0.0;
    }
  }
  auto r = layer_similarity(model, probe_tokens(3, 5, 2), nullptr);
  REQUIRE(r.layers == 4);
  for (double v : r.matrix) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.average == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("orthogonal fixture gives zero off-diagonals") {
  std::vector<std::vector<double>> reps(5, std::vector<double>(5, 0.0));
  for (std::size_t i = 0; i < 5; ++i) reps[i][i] = 0.5 + static_cast<double>(i);
  auto r = similarity_from_representations(reps);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) CHECK(r.at(i, j) == (i == j ? 1.0 : 0.0));
  }
  CHECK(r.average == 0.0);
}

TEST_CASE("similarity invariants on a random model") {
  auto model = Model<float>::build(small_config(), 3);
  auto tokens = probe_tokens(4, 6, 4);
  std::mt19937_64 rng(5);
  std::normal_distribution<float> d(0.0f, 1.0f);
  auto visual = Tensor<float>::zeros({4, 2, 6});
  for (float& v : visual.data()) v = d(rng);
  auto r = layer_similarity(model, tokens, &visual);
  double upper = 0.0;
  for (std::size_t i = 0; i < r.layers; ++i) {
    CHECK(std::abs(r.at(i, i) - 1.0) <= 1e-6);
    for (std::size_t j = 0; j < r.layers; ++j) {
      CHECK(r.at(i, j) == r.at(j, i));
      CHECK(r.at(i, j) >= -1.0);
      CHECK(r.at(i, j) <= 1.0);
      if (j > i) upper += r.at(i, j);
    }
  }
  CHECK(r.average == doctest::Approx(upper / 6.0).epsilon(1e-12));
  auto again = layer_similarity(model, tokens, &visual);
  CHECK(again.matrix == r.matrix);
}

TEST_CASE("cosine matrix ignores uniform positive rescaling") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<std::vector<double>> reps(3, std::vector<double>(7));
  for (auto& v : reps) for (double& x : v) x = d(rng);
  auto scaled = reps;
  for (auto& v : scaled) for (double& x : v) x *= 37.5;
  auto a = similarity_from_representations(reps);
  auto b = similarity_from_representations(scaled);
  for (std::size_t i = 0; i < a.matrix.size(); ++i) CHECK(std::abs(a.matrix[i] - b.matrix[i]) <= 1e-14);
}

TEST_CASE("zero-norm layer is named") {
  std::vector<std::vector<double>> reps{{1.0, 2.0}, {0.0, 0.0}};
  try {
    similarity_from_representations(reps);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
}

TEST_CASE("gradient statistics") {
  ParamTree<double> tree;
  tree.add("zero", Tensor<double>::zeros({10}), true);
  tree.add("flat", Tensor<double>::zeros({6}), true);
  tree.add("frozen", Tensor<double>::zeros({3}), false);
  tree.at("zero").mutable_grad();
  for (double& g : tree.at("flat").mutable_grad()) g = 0.004;

  GradTrace trace;
  std::vector<std::string> sel{"zero", "flat"};
  record_grad_stats(trace, 0, tree, sel);
  REQUIRE(trace.records.size() == 2);
  const auto& z = trace.records[0];
  CHECK(z.mean == 0.0);
  CHECK(z.variance == 0.0);
  CHECK(z.histogram[trace.bin_of(0.0)] == 10);
  CHECK(trace.bin_of(0.0) == 32);
  const auto& f = trace.records[1];
  CHECK(f.mean == doctest::Approx(0.004).epsilon(1e-14));
  CHECK(f.variance <= 1e-30);

  record_grad_stats(trace, 3, tree, sel);
  CHECK(trace.step_count() == 2);
  CHECK_THROWS(record_grad_stats(trace, 3, tree, sel));
  std::vector<std::string> bad{"frozen"};
  CHECK_THROWS(record_grad_stats(trace, 4, tree, bad));
  // Out-of-range values land in the edge bins.
  CHECK(trace.bin_of(-5.0) == 0);
  CHECK(trace.bin_of(5.0) == 63);
}

TEST_CASE("trace variance matches a float64 shadow of the raw buffer") {
  ParamTree<float> tree;
  tree.add("w", Tensor<float>::zeros({257}), true);
  std::mt19937_64 rng(8);
  std::normal_distribution<float> d(0.001f, 0.003f);
  for (float& g : tree.at("w").mutable_grad()) g = d(rng);
  GradTrace trace;
  std::vector<std::string> sel{"w"};
  record_grad_stats(trace, 1, tree, sel);
  std::vector<double> shadow(tree.at("w").grad().begin(), tree.at("w").grad().end());
  double m = 0.0;
  for (double v : shadow) m += v;
  m /= 257.0;
  double var = 0.0;
  for (double v : shadow) var += (v - m) * (v - m);
  var /= 257.0;
  CHECK(std::abs(trace.records[0].variance - var) <= 1e-10);
  std::uint64_t mass = 0;
  for (auto c : trace.records[0].histogram) mass += c;
  CHECK(mass == 257);
}

TEST_CASE("similarity comparison arithmetic") {
  std::vector<std::vector<double>> reps{{1, 0}, {1, 1}, {0, 1}};
  auto r = similarity_from_representations(reps);
  std::vector<SimilarityReport> same{r, r};
  std::vector<std::string> labels{"a", "b"};
  CHECK(compare_similarity(same, labels)[0].relative_difference == 0.0);

  SimilarityReport ft = r, ln = r;
  ft.average = 0.624;
  ln.average = 0.585;
  std::vector<SimilarityReport> pair{ft, ln};
  CHECK(compare_similarity(pair, labels)[0].relative_difference == doctest::Approx(0.0625).epsilon(1e-9));

  const double drop = published_mean_relative_drop();
  CHECK(drop >= 0.105);
  CHECK(drop <= 0.107);

  std::vector<std::vector<double>> two{{1, 0}, {0, 1}};
  std::vector<SimilarityReport> mismatched{r, similarity_from_representations(two)};
  CHECK_THROWS_AS(compare_similarity(mismatched, labels), ShapeError);
}

TEST_CASE("csv and json output") {
  std::vector<std::vector<double>> reps{{1, 0}, {0, 1}};
  auto r = similarity_from_representations(reps);
  CHECK(similarity_csv(r) == "layer,0,1\n0,1,0\n1,0,1\n");
  CHECK(similarity_json(r).find("\"average\": 0.0") != std::string::npos);
  GradTrace t;
  t.records.push_back({2, "blocks.0.input_norm.weight", 0.5, 0.25, {}});
  CHECK(grad_trace_csv(t) == "step,path,mean,variance\n2,blocks.0.input_norm.weight,0.5,0.25\n");
}
