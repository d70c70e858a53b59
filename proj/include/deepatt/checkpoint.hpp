#pragma once

// Checkpoint layout:
//
//   DEEPATT v1
//   <model config as key=value lines>
//   params=<count>
//   then per parameter: "<name> <rank> <dim>...\n" followed by
//   product(dims) little-endian IEEE-754 binary32 values, row-major.

#include <string>

#include "deepatt/encoder.hpp"

namespace deepatt {

inline constexpr const char* kCheckpointMagic = "DEEPATT v1";

template <typename T>
struct Checkpoint {
  ModelConfig config;
  ModelParameters<T> params;
};

template <typename T>
std::string serialize_checkpoint(const ModelConfig& config, const ModelParameters<T>& params);

// Throws DataError on malformed content or shapes inconsistent with config.
template <typename T>
Checkpoint<T> parse_checkpoint(const std::string& bytes);

template <typename T>
void save_checkpoint(const std::string& path, const ModelConfig& config, const ModelParameters<T>& params);

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path);

}  // namespace deepatt
