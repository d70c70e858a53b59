#include "deepatt/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>

namespace deepatt {

std::vector<BenchRow> run_bench(const ModelConfig& base, const BenchOptions& options) {
  if (options.repeats == 0 || options.batch == 0) throw ConfigError("bench needs repeats and batch of at least 1");
  std::vector<BenchRow> rows;
  NoGradGuard no_grad;
  for (SublayerKind kind : options.kinds) {
    ModelConfig config = base;
    config.sublayer = kind;
    config.validate();
    std::mt19937_64 rng(options.seed);
    const auto params = init_parameters<float>(config, options.vocab_size, options.num_tags, rng);
    for (std::size_t n : options.lengths) {
      if (n == 0) throw ConfigError("bench lengths must be positive");
      if (config.position == PositionMode::kEmbedding && n > config.max_positions) {
        throw ConfigError("bench length " + std::to_string(n) + " exceeds max_positions");
      }
      Batch batch;
      batch.size = options.batch;
      batch.max_len = n;
      std::uniform_int_distribution<std::size_t> word(2, options.vocab_size - 1);
      for (std::size_t i = 0; i < options.batch * n; ++i) {
        batch.words.push_back(word(rng));
        batch.masks.push_back(i % n == n / 2 ? 1 : 0);
        batch.tags.push_back(-1);
      }
      batch.padding = build_padding_mask(std::vector<std::size_t>(options.batch, n), n);

      forward_logits(batch, config, params);  // warm-up
      std::vector<double> times;
      for (std::size_t r = 0; r < options.repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto logits = forward_logits(batch, config, params);
        times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      }
      std::nth_element(times.begin(), times.begin() + times.size() / 2, times.end());
      const double secs = times[times.size() / 2];
      rows.push_back({kind, n, static_cast<double>(options.batch * n) / secs, secs * 1e3});
    }
  }
  return rows;
}

std::string format_bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = "sublayer,length,tokens_per_sec,latency_ms\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%zu,%.1f,%.4f\n", to_string(r.kind).c_str(), r.length, r.tokens_per_sec,
                  r.latency_ms);
    out += buf;
  }
  return out;
}

}  // namespace deepatt
