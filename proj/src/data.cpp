#include "normadapt/data.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <sstream>

namespace normadapt::data {

std::string_view category_name(Category c) {
  switch (c) {
    case Category::conversation: return "conversation";
    case Category::description: return "description";
    case Category::reasoning: return "reasoning";
  }
  return "unknown";
}

std::string_view task_kind_name(TaskKind k) { return k == TaskKind::text_pretrain ? "text-pretrain" : "mm-adapt"; }

Mixture Mixture::parse(std::string_view text) {
  Mixture m;
  std::size_t start = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto comma = text.find(',', start);
    if ((i < 2) != (comma != std::string_view::npos)) {
      throw ConfigError("mixture: expected three comma-separated weights, got '" + std::string(text) + "'");
    }
    const std::string part(text.substr(start, comma == std::string_view::npos ? text.npos : comma - start));
    try {
      std::size_t used = 0;
      m.weights[i] = std::stod(part, &used);
      if (part.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ConfigError("mixture: '" + part + "' is not a number");
    }
    start = comma + 1;
  }
  m.validate();
  return m;
}

void Mixture::validate() const {
  double s = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ConfigError("mixture: weights must be non-negative");
    s += w;
  }
  if (std::abs(s - 1.0) > 1e-9) throw ConfigError("mixture: weights must sum to 1");
}

std::string Mixture::str() const {
  std::ostringstream out;
  out << weights[0] << "," << weights[1] << "," << weights[2];
  return out.str();
}

std::size_t body_length() { return 7; }  // ASK a v ASK a v EOS
std::size_t text_length(std::size_t n_attributes) { return n_attributes + 1 + std::max(body_length(), n_attributes + 2); }

std::array<std::size_t, 3> Dataset::category_counts() const {
  std::array<std::size_t, 3> c{0, 0, 0};
  for (const auto& s : samples) ++c[static_cast<std::size_t>(s.category)];
  return c;
}

namespace {

struct Body {
  std::vector<std::int64_t> tokens;
  std::vector<bool> answer;
};

Body make_body(Category cat, const std::vector<int>& z, std::size_t k, std::mt19937_64& rng) {
  Body b;
  auto push = [&](std::int64_t t, bool ans) {
    b.tokens.push_back(t);
    b.answer.push_back(ans);
  };
  std::uniform_int_distribution<std::size_t> pick(0, k - 1);
  auto two_distinct = [&] {
    const std::size_t i = pick(rng);
    std::size_t j = pick(rng);
    while (k > 1 && j == i) j = pick(rng);
    return std::pair{i, j};
  };
  switch (cat) {
    case Category::conversation: {
      const auto [i, j] = two_distinct();
      for (std::size_t a : {i, j}) {
        push(tok::kAsk, false);
        push(attribute_token(a), false);
        push(value_token(k, z[a]), true);
      }
      break;
    }
    case Category::description:
      push(tok::kDesc, false);
      for (std::size_t a = 0; a < k; ++a) push(value_token(k, z[a]), true);
      break;
    case Category::reasoning: {
      const auto [i, j] = two_distinct();
      push(tok::kCmp, false);
      push(attribute_token(i), false);
      push(attribute_token(j), false);
      push(z[i] > z[j] ? tok::kGt : z[i] < z[j] ? tok::kLt : tok::kEq, true);
      break;
    }
  }
  push(tok::kEos, true);
  return b;
}

}  // namespace

Dataset generate(const TaskSpec& spec) {
  if (spec.n_samples == 0) throw ConfigError("task: n_samples must be positive");
  if (spec.n_attributes < 2 || spec.n_values < 2) throw ConfigError("task: need at least 2 attributes and 2 values");
  spec.mixture.validate();

  Dataset ds;
  ds.spec = spec;
  const std::size_t k = spec.n_attributes;
  const bool mm = spec.kind == TaskKind::mm_adapt;
  ds.prefix = mm ? k : 0;
  ds.seq_len = mm ? 1 + std::max(body_length(), k + 2) : text_length(k);

  std::mt19937_64 rng(spec.seed);
  std::discrete_distribution<int> category(spec.mixture.weights.begin(), spec.mixture.weights.end());
  std::uniform_int_distribution<int> value(0, static_cast<int>(spec.n_values) - 1);
  std::optional<VisionStub> vision;
  if (mm) vision.emplace(spec.vision, spec.vision_seed, k, spec.d_visual, k, spec.n_values);

  ds.samples.reserve(spec.n_samples);
  for (std::size_t n = 0; n < spec.n_samples; ++n) {
    Sample s;
    s.category = static_cast<Category>(category(rng));
    s.latent.resize(k);
    for (int& v : s.latent) v = value(rng);
    const Body body = make_body(s.category, s.latent, k, rng);

    std::vector<bool> answer;
    if (!mm) {
      for (std::size_t a = 0; a < k; ++a) {
        s.tokens.push_back(value_token(k, s.latent[a]));
        answer.push_back(false);
      }
    }
    s.tokens.push_back(tok::kSep);
    answer.push_back(false);
    s.tokens.insert(s.tokens.end(), body.tokens.begin(), body.tokens.end());
    answer.insert(answer.end(), body.answer.begin(), body.answer.end());
    s.tokens.resize(ds.seq_len, tok::kPad);
    answer.resize(ds.seq_len, false);

    s.targets.assign(ds.prefix + ds.seq_len, kIgnoreIndex);
    for (std::size_t j = 0; j + 1 < ds.seq_len; ++j) {
      const std::int64_t next = s.tokens[j + 1];
      // Pretraining scores every real next token; adaptation only the answers.
      const bool scored = mm ? answer[j + 1] : next != tok::kPad;
      if (scored) s.targets[ds.prefix + j] = next;
    }
    if (mm) s.visual = vision->encode(s.latent, (spec.seed << 24) ^ n);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::vector<std::int64_t> oracle_answers(const Sample& s, std::size_t k) {
  std::vector<std::int64_t> out;
  const auto sep = std::find(s.tokens.begin(), s.tokens.end(), tok::kSep);
  if (sep == s.tokens.end()) throw Error("oracle: sample has no separator");
  const auto attr = [&](std::int64_t t) { return static_cast<std::size_t>(t - tok::kFirstAttribute); };
  for (auto it = sep + 1; it != s.tokens.end() && *it != tok::kPad;) {
    const std::int64_t t = *it;
    if (t == tok::kAsk) {
      out.push_back(value_token(k, s.latent[attr(*(it + 1))]));
      it += 3;
    } else if (t == tok::kDesc) {
      for (std::size_t a = 0; a < k; ++a) out.push_back(value_token(k, s.latent[a]));
      it += 1 + static_cast<std::ptrdiff_t>(k);
    } else if (t == tok::kCmp) {
      const int zi = s.latent[attr(*(it + 1))], zj = s.latent[attr(*(it + 2))];
      out.push_back(zi > zj ? tok::kGt : zi < zj ? tok::kLt : tok::kEq);
      it += 4;
    } else if (t == tok::kEos) {
      out.push_back(tok::kEos);
      break;
    } else {
      throw Error("oracle: unexpected token " + std::to_string(t));
    }
  }
  return out;
}

std::vector<std::int64_t> scored_tokens(const Sample& s) {
  std::vector<std::int64_t> out;
  for (std::int64_t t : s.targets) {
    if (t != kIgnoreIndex) out.push_back(t);
  }
  return out;
}

template <Scalar T>
Batch<T> make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  Batch<T> b;
  const std::size_t n = indices.size();
  b.tokens.batch = n;
  b.tokens.seq = ds.seq_len;
  b.tokens.ids.reserve(n * ds.seq_len);
  b.targets.reserve(n * (ds.prefix + ds.seq_len));
  std::vector<T> vis;
  for (std::size_t i : indices) {
    const Sample& s = ds.samples.at(i);
    b.tokens.ids.insert(b.tokens.ids.end(), s.tokens.begin(), s.tokens.end());
    b.targets.insert(b.targets.end(), s.targets.begin(), s.targets.end());
    for (double v : s.visual) vis.push_back(static_cast<T>(v));
  }
  if (ds.prefix) b.visual = Tensor<T>({n, ds.prefix, ds.spec.d_visual}, std::move(vis));
  return b;
}

void fit_model_to_task(ModelConfig& config, const TaskSpec& spec) {
  config.vocab_size = vocab_size(spec.n_attributes, spec.n_values);
  config.n_visual_tokens = spec.n_attributes;
  config.d_visual = spec.d_visual;
  config.max_seq = text_length(spec.n_attributes);
}

template Batch<float> make_batch<float>(const Dataset&, std::span<const std::size_t>);
template Batch<double> make_batch<double>(const Dataset&, std::span<const std::size_t>);

}  // namespace normadapt::data
