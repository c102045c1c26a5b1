#include "rtd/weights.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace rtd {
namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <typename U>
U get_le(std::span<const std::uint8_t> bytes, std::size_t at) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[at + i]) << (8 * i);
  return value;
}

json config_to_json(const ModelConfig& c) {
  return json{{"num_layers", c.num_layers},
              {"hidden", c.hidden},
              {"heads", c.heads},
              {"intermediate", c.intermediate},
              {"vocab_size", c.vocab_size},
              {"max_positions", c.max_positions},
              {"embedding_size", c.embedding_size},
              {"type_vocab_size", c.type_vocab_size},
              {"head_role", std::string(head_role_name(c.head_role))},
              {"layer_norm_eps", c.layer_norm_eps},
              {"pad_token_id", c.pad_token_id}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  try {
    c.num_layers = j.at("num_layers").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.heads = j.at("heads").get<int>();
    c.intermediate = j.at("intermediate").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_positions = j.at("max_positions").get<int>();
    c.embedding_size = j.value("embedding_size", c.hidden);
    c.type_vocab_size = j.value("type_vocab_size", 2);
    c.head_role = parse_head_role(j.value("head_role", std::string("discriminator")));
    c.layer_norm_eps = j.value("layer_norm_eps", 1e-12);
    c.pad_token_id = j.value("pad_token_id", 0);
  } catch (const json::exception& e) {
    throw ModelError(std::string("weight container: bad config: ") + e.what());
  }
  c.validate();
  return c;
}

// Expected name -> shape for a configuration.
std::vector<std::pair<std::string, Shape>> expected_layout(const ModelConfig& config) {
  std::vector<std::pair<std::string, Shape>> layout;
  const Parameters<float> probe = Parameters<float>::zeros(config);
  for_each_param(
      [&](const std::string& name, const auto& t) {
        using Tn = std::decay_t<decltype(t)>;
        if constexpr (Tn::RowsAtCompileTime == 1) {
          layout.emplace_back(name, Shape{static_cast<std::size_t>(t.cols())});
        } else {
          layout.emplace_back(name, shape_of(t));
        }
      },
      probe);
  return layout;
}

void validate_container(const WeightContainer& container) {
  container.config.validate();
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& [name, tensor] : container.tensors) {
    if (!by_name.emplace(name, &tensor).second) throw ModelError("weight container: duplicate tensor " + name);
  }
  std::set<std::string> required;
  for (const auto& [name, shape] : expected_layout(container.config)) {
    required.insert(name);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ModelError("weight container: missing tensor " + name);
    if (it->second->shape != shape) {
      throw ModelError("weight container: tensor " + name + " has shape " + shape_string(it->second->shape) +
                       ", expected " + shape_string(shape));
    }
  }
  for (const auto& [name, tensor] : container.tensors) {
    if (!required.contains(name)) throw ModelError("weight container: unexpected tensor " + name);
  }
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

const Tensor<float>* WeightContainer::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::vector<ManifestEntry> WeightContainer::manifest() const {
  std::vector<ManifestEntry> entries;
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : tensors) {
    entries.push_back({name, "f32", tensor.shape, offset});
    offset += tensor.size() * sizeof(float);
  }
  return entries;
}

template <typename T>
WeightContainer to_container(const Parameters<T>& params) {
  WeightContainer container;
  container.config = params.config;
  for_each_param(
      [&](const std::string& name, const auto& t) {
        using Tn = std::decay_t<decltype(t)>;
        Shape shape = Tn::RowsAtCompileTime == 1 ? Shape{static_cast<std::size_t>(t.cols())} : shape_of(t);
        std::vector<float> values(static_cast<std::size_t>(t.size()));
        for (Eigen::Index i = 0; i < t.size(); ++i) values[static_cast<std::size_t>(i)] = static_cast<float>(t.data()[i]);
        container.tensors.emplace_back(name, Tensor<float>(std::move(shape), std::move(values)));
      },
      params);
  return container;
}

template <typename T>
Parameters<T> from_container(const WeightContainer& container) {
  validate_container(container);
  Parameters<T> params = Parameters<T>::zeros(container.config);
  for_each_param(
      [&](const std::string& name, auto& t) {
        const Tensor<float>* src = container.find(name);
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<T>(src->data[static_cast<std::size_t>(i)]);
      },
      params);
  return params;
}

std::vector<std::uint8_t> serialize_weights(const WeightContainer& container) {
  if (container.tensors.empty()) throw ModelError("weight container: refusing to write an empty manifest");
  validate_container(container);
  json manifest = json::array();
  manifest.push_back(json{{"name", kConfigEntryName},
                          {"dtype", "json"},
                          {"shape", json::array({0})},
                          {"offset", 0},
                          {"config", config_to_json(container.config)}});
  for (const auto& entry : container.manifest()) {
    manifest.push_back(json{{"name", entry.name}, {"dtype", entry.dtype}, {"shape", entry.shape}, {"offset", entry.offset}});
  }
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out(std::begin(kWeightMagic), std::end(kWeightMagic));
  put_le<std::uint32_t>(out, kWeightFormatVersion);
  put_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, tensor] : container.tensors) {
    for (float v : tensor.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

WeightContainer deserialize_weights(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t kHeader = 4 + 4 + 8;
  if (bytes.size() < kHeader) throw ModelError("weight container: truncated header");
  if (!std::equal(std::begin(kWeightMagic), std::end(kWeightMagic), bytes.begin(),
                  [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; })) {
    throw ModelError("weight container: bad magic (expected RTDW)");
  }
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kWeightFormatVersion) {
    throw ModelError("weight container: format version " + std::to_string(version) + " unsupported (expected " +
                     std::to_string(kWeightFormatVersion) + ")");
  }
  const auto manifest_len = get_le<std::uint64_t>(bytes, 8);
  if (manifest_len > bytes.size() - kHeader) throw ModelError("weight container: truncated manifest");
  const auto payload = bytes.subspan(kHeader + manifest_len);

  json manifest;
  try {
    manifest = json::parse(bytes.begin() + kHeader, bytes.begin() + static_cast<std::ptrdiff_t>(kHeader + manifest_len));
  } catch (const json::exception& e) {
    throw ModelError(std::string("weight container: manifest is not valid JSON: ") + e.what());
  }
  if (!manifest.is_array()) throw ModelError("weight container: manifest must be a JSON array");

  WeightContainer container;
  bool have_config = false;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> extents;
  for (const auto& entry : manifest) {
    std::string name, dtype;
    Shape shape;
    std::uint64_t offset = 0;
    try {
      name = entry.at("name").get<std::string>();
      dtype = entry.at("dtype").get<std::string>();
      shape = entry.at("shape").get<Shape>();
      offset = entry.at("offset").get<std::uint64_t>();
    } catch (const json::exception& e) {
      throw ModelError(std::string("weight container: malformed manifest entry: ") + e.what());
    }
    if (name == kConfigEntryName) {
      container.config = config_from_json(entry.at("config"));
      have_config = true;
      continue;
    }
    if (dtype != "f32") throw ModelError("weight container: tensor " + name + " has unsupported dtype " + dtype);
    const std::uint64_t nbytes = shape_size(shape) * sizeof(float);
    if (offset > payload.size() || nbytes > payload.size() - offset) {
      throw ModelError("weight container: truncated payload for tensor " + name);
    }
    extents.emplace_back(offset, offset + nbytes);
    std::vector<float> values(shape_size(shape));
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] = std::bit_cast<float>(get_le<std::uint32_t>(payload, offset + i * sizeof(float)));
    }
    container.tensors.emplace_back(name, Tensor<float>(std::move(shape), std::move(values)));
  }
  if (!have_config) throw ModelError("weight container: manifest has no __config__ entry");
  std::sort(extents.begin(), extents.end());
  for (std::size_t i = 1; i < extents.size(); ++i) {
    if (extents[i].first < extents[i - 1].second) throw ModelError("weight container: overlapping tensor offsets");
  }
  validate_container(container);
  return container;
}

void save_weights(const WeightContainer& container, const std::filesystem::path& path) {
  const auto bytes = serialize_weights(container);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ModelError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ModelError("write failed for " + path.string());
}

WeightContainer load_weights(const std::filesystem::path& path) {
  const std::string raw = read_text(path);
  return deserialize_weights({reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()});
}

std::vector<std::vector<int>> load_parity_inputs(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::vector<std::vector<int>> sequences;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    std::vector<int> ids;
    int id = 0;
    while (fields >> id) ids.push_back(id);
    if (!fields.eof()) throw ModelError("parity inputs: non-integer token on line " + std::to_string(sequences.size() + 1));
    sequences.push_back(std::move(ids));
  }
  if (sequences.empty()) throw ModelError("parity inputs: " + path.string() + " is empty");
  return sequences;
}

std::vector<std::vector<double>> load_parity_reference(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line.rfind("seq_index,position,p_replaced", 0) != 0) {
    throw ModelError("parity csv: missing header seq_index,position,p_replaced");
  }
  std::vector<std::vector<double>> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::size_t seq = 0, pos = 0;
    double p = 0.0;
    char c1 = 0, c2 = 0;
    std::istringstream fields(line);
    if (!(fields >> seq >> c1 >> pos >> c2 >> p) || c1 != ',' || c2 != ',') {
      throw ModelError("parity csv: malformed line " + std::to_string(line_no));
    }
    if (out.size() <= seq) out.resize(seq + 1);
    if (out[seq].size() != pos) throw ModelError("parity csv: positions out of order on line " + std::to_string(line_no));
    out[seq].push_back(p);
  }
  return out;
}

template <typename T>
double parity_max_abs_diff(const Parameters<T>& params, const std::vector<std::vector<int>>& inputs,
                           const std::vector<std::vector<double>>& reference) {
  if (inputs.size() != reference.size()) {
    throw ModelError("parity: " + std::to_string(inputs.size()) + " inputs but " + std::to_string(reference.size()) +
                     " reference sequences");
  }
  double worst = 0.0;
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    const std::vector<int> segments(inputs[s].size(), 0);
    const auto out = discriminator_forward<T>(inputs[s], segments, params);
    if (out.p_replaced.size() != reference[s].size()) {
      throw ModelError("parity: sequence " + std::to_string(s) + " length differs from reference");
    }
    for (std::size_t t = 0; t < out.p_replaced.size(); ++t) {
      worst = std::max(worst, std::abs(out.p_replaced[t] - reference[s][t]));
    }
  }
  return worst;
}

template WeightContainer to_container<float>(const Parameters<float>&);
template WeightContainer to_container<double>(const Parameters<double>&);
template Parameters<float> from_container<float>(const WeightContainer&);
template Parameters<double> from_container<double>(const WeightContainer&);
template double parity_max_abs_diff<float>(const Parameters<float>&, const std::vector<std::vector<int>>&,
                                           const std::vector<std::vector<double>>&);
template double parity_max_abs_diff<double>(const Parameters<double>&, const std::vector<std::vector<int>>&,
                                            const std::vector<std::vector<double>>&);

}  // namespace rtd
