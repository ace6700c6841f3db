#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "normadapt/model.hpp"

namespace normadapt {

namespace {

constexpr char kMagic[] = "NORMADAPT1";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

template <typename V>
V byteswap_value(V v) {
  unsigned char bytes[sizeof(V)];
  std::memcpy(bytes, &v, sizeof(V));
  std::reverse(bytes, bytes + sizeof(V));
  std::memcpy(&v, bytes, sizeof(V));
  return v;
}

template <typename V>
void write_le(std::ostream& out, V v) {
  if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_le(std::istream& in) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw IoError("checkpoint: truncated archive");
  if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
  return v;
}

template <Scalar Src, Scalar Dst>
std::vector<Dst> read_buffer(std::istream& in, std::size_t n) {
  std::vector<Dst> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<Dst>(read_le<Src>(in));
  return out;
}

}  // namespace

std::string config_to_text(const ModelConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "n_layers = " << c.n_layers << "\n"
      << "d_model = " << c.d_model << "\n"
      << "n_heads = " << c.n_heads << "\n"
      << "d_ff = " << c.d_ff << "\n"
      << "vocab_size = " << c.vocab_size << "\n"
      << "max_seq = " << c.max_seq << "\n"
      << "norm_kind = " << norm_kind_name(c.norm_kind) << "\n"
      << "n_visual_tokens = " << c.n_visual_tokens << "\n"
      << "d_visual = " << c.d_visual << "\n"
      << "tie_embeddings = " << (c.tie_embeddings ? "true" : "false") << "\n"
      << "mlp_kind = " << (c.mlp_kind == MlpKind::gated ? "gated" : "plain") << "\n"
      << "learned_positions = " << (c.learned_positions ? "true" : "false") << "\n"
      << "norm_eps = " << c.norm_eps << "\n";
  return out.str();
}

ModelConfig config_from_text(const std::string& text) {
  ModelConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto as_size = [&] { return static_cast<std::size_t>(std::stoull(value)); };
    if (key == "n_layers") c.n_layers = as_size();
    else if (key == "d_model") c.d_model = as_size();
    else if (key == "n_heads") c.n_heads = as_size();
    else if (key == "d_ff") c.d_ff = as_size();
    else if (key == "vocab_size") c.vocab_size = as_size();
    else if (key == "max_seq") c.max_seq = as_size();
    else if (key == "norm_kind") c.norm_kind = norm_kind_from_name(value);
    else if (key == "n_visual_tokens") c.n_visual_tokens = as_size();
    else if (key == "d_visual") c.d_visual = as_size();
    else if (key == "tie_embeddings") c.tie_embeddings = value == "true";
    else if (key == "mlp_kind") c.mlp_kind = value == "gated" ? MlpKind::gated : MlpKind::plain;
    else if (key == "learned_positions") c.learned_positions = value == "true";
    else if (key == "norm_eps") c.norm_eps = std::stod(value);
    else throw IoError("checkpoint: unknown config key '" + key + "'");
  }
  return c;
}

template <Scalar T>
void save_checkpoint(const Model<T>& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  out.write(kMagic, kMagicLen);
  const std::string header = config_to_text(model.config());
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  write_le<std::uint64_t>(out, model.params().size());
  for (const auto& entry : model.params()) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(entry.path.size()));
    out.write(entry.path.data(), static_cast<std::streamsize>(entry.path.size()));
    write_le<std::uint8_t>(out, static_cast<std::uint8_t>(dtype_of<T>()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(entry.tensor.rank()));
    for (std::size_t d : entry.tensor.shape()) write_le<std::uint64_t>(out, d);
    for (T v : entry.tensor.data()) write_le<T>(out, v);
  }
  if (!out) throw IoError("checkpoint: write to '" + path + "' failed");
}

template <Scalar T>
Model<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open '" + path + "'");
  char magic[kMagicLen];
  in.read(magic, kMagicLen);
  if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0) {
    throw IoError("checkpoint: '" + path + "' is not a NORMADAPT1 archive");
  }
  const auto header_len = read_le<std::uint32_t>(in);
  std::string header(header_len, '\0');
  in.read(header.data(), header_len);
  if (!in) throw IoError("checkpoint: truncated header");

  ModelConfig config = config_from_text(header);
  config.validate();
  ParamTree<T> tree;
  const auto count = read_le<std::uint64_t>(in);
  for (std::uint64_t r = 0; r < count; ++r) {
    const auto path_len = read_le<std::uint32_t>(in);
    std::string name(path_len, '\0');
    in.read(name.data(), path_len);
    const auto dtype = static_cast<DType>(read_le<std::uint8_t>(in));
    const auto rank = read_le<std::uint32_t>(in);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(read_le<std::uint64_t>(in));
    const std::size_t n = numel(shape);
    std::vector<T> data = dtype == DType::float32 ? read_buffer<float, T>(in, n)
                                                  : read_buffer<double, T>(in, n);
    tree.add(std::move(name), Tensor<T>(std::move(shape), std::move(data)), true);
  }
  for (const auto& spec : param_inventory(config)) {
    if (!tree.contains(spec.path) || tree.at(spec.path).shape() != spec.shape) {
      throw IoError("checkpoint: parameter '" + spec.path + "' missing or misshapen");
    }
  }
  return Model<T>(std::move(config), std::move(tree));
}

template void save_checkpoint<float>(const Model<float>&, const std::string&);
template void save_checkpoint<double>(const Model<double>&, const std::string&);
template Model<float> load_checkpoint<float>(const std::string&);
template Model<double> load_checkpoint<double>(const std::string&);

}  // namespace normadapt
