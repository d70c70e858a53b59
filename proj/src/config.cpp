#include "deepatt/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "deepatt/text.hpp"

namespace deepatt {

void RunConfig::validate() const {
  model.validate();
  schedule.validate();
  if (min_count < 1) throw ConfigError("min_count must be at least 1");
}

std::string RunConfig::serialize() const {
  std::ostringstream out;
  out << "# model\n";
  for (const auto& [k, v] : model.to_pairs()) out << k << '=' << v << '\n';
  out << "# schedule\n";
  for (const auto& [k, v] : schedule.to_pairs()) out << k << '=' << v << '\n';
  out << "# run\n";
  out << "train=" << train_path << '\n';
  out << "dev=" << dev_path << '\n';
  out << "test=" << test_path << '\n';
  out << "embeddings=" << embeddings_path << '\n';
  out << "checkpoint_dir=" << checkpoint_dir << '\n';
  out << "seed=" << seed << '\n';
  out << "decode=" << to_string(decode) << '\n';
  out << "precision=" << (f64 ? "f64" : "f32") << '\n';
  out << "min_count=" << min_count << '\n';
  return out.str();
}

RunConfig RunConfig::parse(const std::string& text, const std::string& source) {
  RunConfig config;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no);
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key=value");
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    try {
      if (config.model.set(key, value) || config.schedule.set(key, value)) continue;
      if (key == "train") config.train_path = value;
      else if (key == "dev") config.dev_path = value;
      else if (key == "test") config.test_path = value;
      else if (key == "embeddings") config.embeddings_path = value;
      else if (key == "checkpoint_dir") config.checkpoint_dir = value;
      else if (key == "seed") config.seed = static_cast<std::uint64_t>(parse_size(value, key));
      else if (key == "decode") config.decode = parse_decode_mode(value);
      else if (key == "precision") {
        if (value != "f32" && value != "f64") throw ConfigError("precision must be f32 or f64");
        config.f64 = value == "f64";
      } else if (key == "min_count") config.min_count = parse_size(value, key);
      else throw ConfigError("unknown key '" + key + "'");
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  return config;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path);
}

void RunConfig::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write config file " + path);
  out << serialize();
}

}  // namespace deepatt
