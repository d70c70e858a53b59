#include "deepatt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "deepatt/text.hpp"

namespace deepatt {

namespace {

static_assert(sizeof(float) == 4);

void append_f32(std::string& out, float value) {
  auto bits = std::bit_cast<std::uint32_t>(value);
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>(bits & 0xFFu));
    bits >>= 8;
  }
}

float read_f32(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | static_cast<unsigned char>(p[i]);
  return std::bit_cast<float>(bits);
}

struct Cursor {
  const std::string& bytes;
  std::size_t pos = 0;

  std::string line() {
    const auto end = bytes.find('\n', pos);
    if (end == std::string::npos) throw DataError("checkpoint: truncated header");
    std::string out = bytes.substr(pos, end - pos);
    pos = end + 1;
    return out;
  }
};

}  // namespace

template <typename T>
std::string serialize_checkpoint(const ModelConfig& config, const ModelParameters<T>& params) {
  std::string out = std::string(kCheckpointMagic) + "\n";
  for (const auto& [key, value] : config.to_pairs()) out += key + "=" + value + "\n";
  const auto named = params.named();
  out += "params=" + std::to_string(named.size()) + "\n";
  for (const auto& [name, tensor] : named) {
    out += name + " " + std::to_string(tensor.rank());
    for (std::size_t d : tensor.shape()) out += " " + std::to_string(d);
    out += "\n";
    for (T v : tensor.data()) append_f32(out, static_cast<float>(v));
  }
  return out;
}

template <typename T>
Checkpoint<T> parse_checkpoint_impl(const std::string& bytes) {
  Cursor cur{bytes};
  if (cur.line() != kCheckpointMagic) throw DataError("checkpoint: missing '" + std::string(kCheckpointMagic) + "' header");
  ModelConfig config;
  std::size_t count = 0;
  while (true) {
    const std::string line = cur.line();
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("checkpoint: malformed header line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "params") {
      count = parse_size(value, "params");
      break;
    }
    if (!config.set(key, value)) throw DataError("checkpoint: unknown config key '" + key + "'");
  }

  struct Entry {
    Shape shape;
    std::vector<float> values;
  };
  std::map<std::string, Entry> entries;
  for (std::size_t i = 0; i < count; ++i) {
    const auto fields = split_whitespace(cur.line());
    if (fields.size() < 2) throw DataError("checkpoint: malformed parameter record");
    const std::size_t rank = parse_size(fields[1], "rank");
    if (fields.size() != 2 + rank) throw DataError("checkpoint: rank/dims mismatch for " + fields[0]);
    Entry e;
    for (std::size_t r = 0; r < rank; ++r) e.shape.push_back(parse_size(fields[2 + r], "dim"));
    const std::size_t n = shape_numel(e.shape);
    if (cur.pos + 4 * n > bytes.size()) throw DataError("checkpoint: truncated values for " + fields[0]);
    e.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) e.values[k] = read_f32(bytes.data() + cur.pos + 4 * k);
    cur.pos += 4 * n;
    if (!entries.emplace(fields[0], std::move(e)).second) throw DataError("checkpoint: duplicate parameter " + fields[0]);
  }
  if (cur.pos != bytes.size()) throw DataError("checkpoint: trailing bytes after parameters");

  const auto word = entries.find("embedding/word");
  const auto output = entries.find("output/weight");
  if (word == entries.end() || output == entries.end() || word->second.shape.size() != 2 ||
      output->second.shape.size() != 2) {
    throw DataError("checkpoint: missing embedding/word or output/weight");
  }
  Checkpoint<T> ckpt{config, ModelParameters<T>::zeros(config, word->second.shape[0], output->second.shape[1])};
  const auto expected = ckpt.params.named();
  if (expected.size() != entries.size()) {
    throw DataError("checkpoint: holds " + std::to_string(entries.size()) + " parameters, config implies " +
                    std::to_string(expected.size()));
  }
  for (auto [name, tensor] : expected) {
    const auto it = entries.find(name);
    if (it == entries.end()) throw DataError("checkpoint: missing parameter " + name);
    if (it->second.shape != tensor.shape()) {
      throw DataError("checkpoint: parameter " + name + " has shape " + shape_to_string(it->second.shape) +
                      ", expected " + shape_to_string(tensor.shape()));
    }
    auto values = tensor.mutable_data();
    for (std::size_t k = 0; k < values.size(); ++k) values[k] = T(it->second.values[k]);
  }
  return ckpt;
}

template <typename T>
Checkpoint<T> parse_checkpoint(const std::string& bytes) {
  try {
    return parse_checkpoint_impl<T>(bytes);
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
}

template <typename T>
void save_checkpoint(const std::string& path, const ModelConfig& config, const ModelParameters<T>& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path);
  const std::string bytes = serialize_checkpoint(config, params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint " + path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint<T>(buf.str());
}

#define DEEPATT_INSTANTIATE(T)                                                                          \
  template std::string serialize_checkpoint<T>(const ModelConfig&, const ModelParameters<T>&);          \
  template Checkpoint<T> parse_checkpoint<T>(const std::string&);                                       \
  template void save_checkpoint<T>(const std::string&, const ModelConfig&, const ModelParameters<T>&);  \
  template Checkpoint<T> load_checkpoint<T>(const std::string&);

DEEPATT_INSTANTIATE(float)
DEEPATT_INSTANTIATE(double)

#undef DEEPATT_INSTANTIATE

}  // namespace deepatt
