#pragma once

// Forward-pass throughput of the encoder per sub-layer kind and length.

#include <cstdint>
#include <string>
#include <vector>

#include "deepatt/encoder.hpp"

namespace deepatt {

struct BenchOptions {
  std::vector<SublayerKind> kinds{SublayerKind::kFeedForward, SublayerKind::kGluConv, SublayerKind::kBiLstm};
  std::vector<std::size_t> lengths;
  std::size_t batch = 1;
  std::size_t repeats = 5;  // timed forwards per cell; the median is reported
  std::size_t vocab_size = 1000;
  std::size_t num_tags = 20;
  std::uint64_t seed = 1;
};

struct BenchRow {
  SublayerKind kind;
  std::size_t length;
  double tokens_per_sec;
  double latency_ms;
};

// `config.sublayer` is overridden by each entry of options.kinds.
std::vector<BenchRow> run_bench(const ModelConfig& config, const BenchOptions& options);

// Header "sublayer,length,tokens_per_sec,latency_ms" plus one line per row.
std::string format_bench_csv(const std::vector<BenchRow>& rows);

}  // namespace deepatt
