#pragma once

// Run configuration file: one `key=value` per line, `#` comments and blank
// lines ignored. Keys are the model keys, the schedule keys and the run keys
// below, each at most once.

#include <cstdint>
#include <string>

#include "deepatt/encoder.hpp"
#include "deepatt/tagger.hpp"
#include "deepatt/training.hpp"

namespace deepatt {

struct RunConfig {
  ModelConfig model;
  TrainSchedule schedule;
  std::string train_path;
  std::string dev_path;
  std::string test_path;
  std::string embeddings_path;
  std::string checkpoint_dir = "checkpoints";
  std::uint64_t seed = 1;
  DecodeMode decode = DecodeMode::kArgmax;
  bool f64 = false;
  std::size_t min_count = 1;

  void validate() const;
  std::string serialize() const;
  // Throws ConfigError naming `source` and the line.
  static RunConfig parse(const std::string& text, const std::string& source = "<memory>");
  static RunConfig load(const std::string& path);
  void save(const std::string& path) const;

  bool operator==(const RunConfig&) const = default;
};

}  // namespace deepatt
