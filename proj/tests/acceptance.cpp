// Prints one PASS/FAIL line per acceptance criterion; exits nonzero if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include "deepatt/bench.hpp"
#include "deepatt/checkpoint.hpp"
#include "deepatt/cli.hpp"
#include "deepatt/config.hpp"
#include "deepatt/gradcheck.hpp"
#include "deepatt/tagger.hpp"
#include "deepatt/training.hpp"
#include "oracles.hpp"

using namespace deepatt;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

constexpr double kGradcheckSeconds = 120.0;
constexpr double kRowSumTol = 1e-6;
constexpr double kMaskedMassTol = 1e-8;
constexpr double kEquivarianceTol = 1e-5;
constexpr double kTimingTol = 1e-12;
constexpr double kOverfitSeconds = 300.0;
constexpr double kFfnAccuracy = 0.99;
constexpr double kFfnF1 = 95.0;
constexpr double kOtherAccuracy = 0.95;
constexpr double kDecodeF1Gap = 1.0;
constexpr double kAdadeltaTol = 1e-9;
constexpr double kCosineTol = 1e-12;

struct Verdict {
  bool pass;
  std::string detail;
};

std::string fmt(const char* format, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), format, a, b, c);
  return buf;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

ModelConfig small_model(SublayerKind kind) {
  ModelConfig c;
  c.depth = 2;
  c.width = 32;
  c.heads = 4;
  c.ffn_width = 128;
  c.word_dim = 16;
  c.mask_dim = 16;
  c.sublayer = kind;
  return c;
}

// Trained FFN tagger from the overfit run, reused by the decoding comparison.
std::optional<Tagger<float>> g_ffn_tagger;

Verdict gradients() {
  const auto start = Clock::now();
  const auto results = run_gradcheck();
  const double secs = seconds_since(start);
  double worst = 0;
  std::string failed;
  for (const auto& r : results) {
    worst = std::max(worst, r.max_rel_err);
    if (!r.pass) failed += " " + r.op;
  }
  const bool pass = failed.empty() && secs < kGradcheckSeconds;
  return {pass, std::to_string(results.size()) + " ops, worst rel err " + fmt("%.2e", worst) + ", " +
                    fmt("%.1fs", secs) + (failed.empty() ? "" : ", failed:" + failed)};
}

Verdict attention_properties() {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> dist(0, 1.5);
  const std::vector<std::size_t> lengths{6, 4, 1};
  const std::size_t n = 6, d = 8;
  auto random = [&](Shape shape) {
    std::size_t count = 1;
    for (auto s : shape) count *= s;
    std::vector<double> v(count);
    for (auto& x : v) x = dist(rng);
    return Tensor<double>(shape, v);
  };
  const PaddingMask mask = build_padding_mask(lengths, n);
  const auto q = random({3, n, d}), k = random({3, n, d}), v = random({3, n, d});
  const auto out = scaled_dot_product_attention(q, k, v, &mask, 8.0);
  const auto w = out.weights.data();
  double row_err = 0, masked = 0;
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const double p = w[(b * n + i) * n + j];
        sum += p;
        if (!mask.is_valid(b, j)) masked = std::max(masked, p);
      }
      row_err = std::max(row_err, std::abs(sum - 1.0));
    }

  ModelConfig c = small_model(SublayerKind::kFeedForward);
  c.position = PositionMode::kNone;
  std::mt19937_64 init(5);
  const auto params = init_parameters<double>(c, 12, 5, init);
  Batch batch{1, 7, {2, 3, 4, 5, 6, 7, 8}, {0, 0, 1, 0, 0, 0, 0}, std::vector<int>(7, -1), build_padding_mask({7}, 7)};
  const std::vector<std::size_t> perm{4, 0, 6, 2, 1, 5, 3};
  Batch permuted = batch;
  for (std::size_t i = 0; i < 7; ++i) {
    permuted.words[i] = batch.words[perm[i]];
    permuted.masks[i] = batch.masks[perm[i]];
  }
  const Tensor<double> ta = forward_logits(batch, c, params), tb = forward_logits(permuted, c, params);
  const auto a = ta.data();
  const auto b = tb.data();
  double equi = 0;
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 5; ++j) equi = std::max(equi, std::abs(b[i * 5 + j] - a[perm[i] * 5 + j]));

  const bool pass = row_err < kRowSumTol && masked < kMaskedMassTol && equi < kEquivarianceTol;
  return {pass, fmt("row sum err %.2e, max masked weight %.2e, permutation err %.2e", row_err, masked, equi)};
}

Verdict timing() {
  double worst = 0;
  for (std::size_t d : {4, 200})
    for (std::size_t t : {0, 1, 50}) {
      const auto got = timing_signal(t, d);
      for (std::size_t ch = 0; ch < d; ++ch)
        worst = std::max(worst, static_cast<double>(std::abs(static_cast<long double>(got[ch]) - oracle::timing(t, ch, d))));
    }

  // The same token at two positions.
  auto encoded_gap = [](PositionMode mode) {
    ModelConfig c = small_model(SublayerKind::kFeedForward);
    c.position = mode;
    std::mt19937_64 rng(3);
    const auto params = init_parameters<double>(c, 6, 3, rng);
    Batch batch{1, 3, {4, 2, 4}, {0, 1, 0}, {-1, -1, -1}, build_padding_mask({3}, 3)};
    const Tensor<double> encoded = add_position_signal(embed_inputs(batch, params), c, params);
    const auto x = encoded.data();
    double gap = 0;
    for (std::size_t ch = 0; ch < c.width; ++ch) gap = std::max(gap, std::abs(x[ch] - x[2 * c.width + ch]));
    return gap;
  };
  const double with_timing = encoded_gap(PositionMode::kTiming);
  const double without = encoded_gap(PositionMode::kNone);
  const bool pass = worst < kTimingTol && with_timing > 1e-3 && without == 0.0;
  return {pass, fmt("max err vs oracle %.2e, repeated-token gap %.3f with timing, %.1f without", worst, with_timing,
                    without)};
}

Verdict overfit() {
  const Corpus corpus = generate_synthetic_corpus(50, 7);
  const Vocabulary vocab = build_vocab(corpus);
  const TagSet tags = build_tagset(corpus);
  TrainSchedule schedule;
  schedule.token_budget = 512;
  schedule.total_steps = 2000;
  schedule.plateau_steps = 2000;
  schedule.halving_interval = 1000;
  schedule.eval_interval = 0;

  bool pass = true;
  std::string detail;
  const std::pair<SublayerKind, const char*> kinds[] = {
      {SublayerKind::kFeedForward, "ffn"}, {SublayerKind::kGluConv, "cnn"}, {SublayerKind::kBiLstm, "rnn"}};
  for (const auto& [kind, name] : kinds) {
    const ModelConfig config = small_model(kind);
    const auto start = Clock::now();
    const auto result = train_loop<float>(corpus, nullptr, vocab, tags, config, schedule, 1);
    const double secs = seconds_since(start);
    const Tagger<float> tagger{config, result.final_params, vocab, tags};
    const Corpus predicted = tag_corpus(tagger, corpus, DecodeMode::kArgmax);
    const double acc = token_accuracy(predicted, corpus);
    const double f1 = 100.0 * span_prf(corpus_spans(predicted), corpus_spans(corpus)).overall.f1;
    if (kind == SublayerKind::kFeedForward) {
      pass = pass && acc >= kFfnAccuracy && f1 >= kFfnF1 && secs < kOverfitSeconds;
      g_ffn_tagger = tagger;
    } else {
      pass = pass && acc >= kOtherAccuracy;
    }
    detail += std::string(detail.empty() ? "" : "; ") + name + fmt(" acc %.4f F1 %.2f %.0fs", acc, f1, secs);
  }
  return {pass, detail};
}

Verdict decoding() {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> dist(0, 2);
  const std::vector<TagSet> sets{TagSet::from_roles({"A0"}), TagSet::from_roles({"A0", "A1"}),
                                 TagSet::from_roles({"A0", "A1", "V"})};
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const TagSet& t = sets[trial % sets.size()];
    const std::size_t n = 1 + trial % 5;
    ScoreMatrix m{n, t.size(), std::vector<double>(n * t.size())};
    for (auto& v : m.values) v = dist(rng);
    const auto got = constrained_decode(m, t);
    const auto want = oracle::exhaustive_decode(m.values, n, t.labels());
    double a = 0, b = 0;
    for (std::size_t i = 0; i < n; ++i) a += m.at(i, got[i]), b += m.at(i, want[i]);
    if (!is_valid_bio(got, t) || std::abs(a - b) > 1e-9) ++mismatches;
  }
  if (!g_ffn_tagger) return {false, "no trained FFN model available"};
  const Corpus dev = generate_synthetic_corpus(50, 8);
  const auto argmax = tag_corpus(*g_ffn_tagger, dev, DecodeMode::kArgmax);
  const auto constrained = tag_corpus(*g_ffn_tagger, dev, DecodeMode::kConstrained);
  bool valid = true;
  for (const auto& s : constrained) {
    std::vector<std::string> labels(s.tags.begin(), s.tags.end());
    valid = valid && oracle::valid_bio(labels);
  }
  const double f1_a = 100.0 * span_prf(corpus_spans(argmax), corpus_spans(dev)).overall.f1;
  const double f1_c = 100.0 * span_prf(corpus_spans(constrained), corpus_spans(dev)).overall.f1;
  const bool pass = mismatches == 0 && valid && std::abs(f1_a - f1_c) <= kDecodeF1Gap;
  return {pass, std::to_string(mismatches) + "/1000 exhaustive mismatches, dev F1 argmax " +
                    fmt("%.2f constrained %.2f", f1_a, f1_c) + (valid ? ", all valid" : ", invalid output")};
}

Verdict metrics() {
  std::mt19937_64 rng(23);
  const std::vector<std::string> roles{"A0", "A1", "A2", "AM-LOC", "AM-TMP", "V"};
  std::size_t bad = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<PredicateSpans> pred, gold;
    std::vector<oracle::Spans> op, og;
    for (int i = 0; i < 4; ++i) {
      auto g = oracle::random_spans(8, roles, rng);
      auto p = rng() % 4 == 0 ? g : oracle::random_spans(8, roles, rng);
      if (rng() % 2 == 0 && !p.empty()) std::get<2>(p[0]) = roles[rng() % roles.size()];
      PredicateSpans ps, gs;
      for (const auto& [s, e, r] : p) ps.push_back({s, e, r});
      for (const auto& [s, e, r] : g) gs.push_back({s, e, r});
      op.push_back(std::move(p));
      og.push_back(std::move(g));
      pred.push_back(ps);
      gold.push_back(gs);
    }
    const auto want = oracle::brute_force_metrics(op, og);
    const auto got = evaluate_spans(pred, gold);
    bool ok = got.scores.overall.true_positive == want.overall.tp &&
              got.scores.overall.false_positive == want.overall.fp &&
              got.scores.overall.false_negative == want.overall.fn &&
              std::abs(got.scores.overall.f1 - want.overall.f1()) < 1e-12 &&
              std::abs(got.scores.complete - want.comp) < 1e-12 && got.per_label.size() == want.per_label.size() &&
              got.confusion.counts == want.confusion && std::abs(got.split.identification - want.ident) < 1e-9 &&
              std::abs(got.split.classification - want.classify) < 1e-9;
    for (const auto& [role, c] : want.per_label) {
      const auto it = got.per_label.find(role);
      ok = ok && it != got.per_label.end() && it->second.true_positive == c.tp &&
           it->second.false_positive == c.fp && it->second.false_negative == c.fn;
    }
    bad += !ok;
  }
  return {bad == 0, std::to_string(bad) + "/200 random pairs disagree with brute-force counting"};
}

Verdict optimizer() {
  const double rho = 0.95, eps = 1e-6, lr = 1.0;
  std::vector<double> x{0.3, -1.2};
  AdadeltaSlot<double> slot;
  double worst = 0;
  std::vector<double> eg(2, 0), ed(2, 0), ref = x;
  const std::vector<std::vector<double>> grads{{1.0, -0.5}, {0.25, 2.0}};
  for (const auto& g : grads) {
    for (std::size_t i = 0; i < 2; ++i) {
      eg[i] = rho * eg[i] + (1 - rho) * g[i] * g[i];
      const double delta = -std::sqrt(ed[i] + eps) / std::sqrt(eg[i] + eps) * g[i];
      ed[i] = rho * ed[i] + (1 - rho) * delta * delta;
      ref[i] += lr * delta;
    }
    adadelta_step<double>(x, g, slot, rho, eps, lr);
    for (std::size_t i = 0; i < 2; ++i) worst = std::max(worst, std::abs(x[i] - ref[i]));
  }

  std::vector<double> g1{3.0, -4.0}, g2{12.0};
  const std::vector<double> before{3.0, -4.0, 12.0};
  const double norm = clip_global_norm<double>({std::span<double>(g1), std::span<double>(g2)}, 1.0);
  const std::vector<double> after{g1[0], g1[1], g2[0]};
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < 3; ++i) dot += before[i] * after[i], na += before[i] * before[i], nb += after[i] * after[i];
  const double cosine = dot / std::sqrt(na * nb);
  const bool clip_ok = std::abs(norm - 13.0) < 1e-12 && std::abs(std::sqrt(nb) - 1.0) < 1e-12 &&
                       std::abs(cosine - 1.0) < kCosineTol;

  const TrainSchedule s;
  const std::pair<std::size_t, double> table[] = {{0, 1.0},      {100000, 1.0},  {399999, 1.0}, {400000, 0.5},
                                                  {499999, 0.5}, {550000, 0.25}, {599999, 0.25}};
  bool lr_ok = true;
  for (const auto& [step, want] : table) lr_ok = lr_ok && lr_at(step, s) == want;

  const bool pass = worst < kAdadeltaTol && clip_ok && lr_ok;
  return {pass, fmt("adadelta err %.2e, clip cosine-1 %.1e, ", worst, cosine - 1.0) +
                    (lr_ok ? "lr table ok" : "lr table mismatch")};
}

Verdict throughput() {
  ModelConfig config;
  config.depth = 2;
  BenchOptions options;
  options.kinds = {SublayerKind::kFeedForward, SublayerKind::kBiLstm};
  options.lengths = {100};
  options.repeats = 3;
  const auto rows = run_bench(config, options);
  const double ffn = rows.at(0).tokens_per_sec, rnn = rows.at(1).tokens_per_sec;
  return {ffn > rnn, fmt("d=200 n=100 depth 2: ffn %.0f tok/s, rnn %.0f tok/s", ffn, rnn)};
}

Verdict round_trips() {
  const ModelConfig config = small_model(SublayerKind::kGluConv);
  std::mt19937_64 rng(4);
  const auto params = init_parameters<float>(config, 20, 7, rng);
  const std::string bytes = serialize_checkpoint(config, params);
  const auto loaded = parse_checkpoint<float>(bytes);
  const bool ckpt_ok = serialize_checkpoint(loaded.config, loaded.params) == bytes && loaded.config == config;

  RunConfig run;
  run.model = config;
  run.train_path = "train.txt";
  run.seed = 9;
  const std::string text = run.serialize();
  const bool cfg_ok = RunConfig::parse(text).serialize() == text && RunConfig::parse(text) == run;

  // Tag twice with the same checkpoint and compare the outputs byte for byte.
  const fs::path dir = fs::temp_directory_path() / "deepatt_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const Corpus corpus = generate_synthetic_corpus(30, 12);
  const Vocabulary vocab = build_vocab(corpus);
  const TagSet tags = build_tagset(corpus);
  const ModelConfig tag_config = small_model(SublayerKind::kFeedForward);
  std::mt19937_64 init(2);
  const std::string ckpt = (dir / "model.ckpt").string();
  save_checkpoint(ckpt, tag_config, init_parameters<float>(tag_config, vocab.size(), tags.size(), init));
  write_lines(ckpt + ".words", vocab.words());
  write_lines(ckpt + ".tags", tags.labels());
  const std::string input = (dir / "input.txt").string();
  write_corpus(input, corpus);
  std::string outputs[2];
  int codes[2];
  for (int i = 0; i < 2; ++i) {
    const std::string out = (dir / ("tagged" + std::to_string(i) + ".txt")).string();
    const char* argv[] = {"deepatt", "tag",          "--checkpoint", ckpt.c_str(), "--input",
                          input.c_str(), "--output", out.c_str(),    "--decode",   "constrained"};
    std::ostringstream o, e;
    codes[i] = run_cli(10, argv, o, e);
    std::ifstream in(out, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    outputs[i] = buf.str();
  }
  const bool tag_ok = codes[0] == 0 && codes[1] == 0 && !outputs[0].empty() && outputs[0] == outputs[1];
  return {ckpt_ok && cfg_ok && tag_ok, std::string("checkpoint ") + (ckpt_ok ? "identical" : "differs") +
                                           ", config " + (cfg_ok ? "identical" : "differs") + ", tagging " +
                                           (tag_ok ? "deterministic" : "not deterministic")};
}

}  // namespace

int main() {
  const std::function<Verdict()> criteria[] = {gradients, attention_properties, timing, overfit, decoding,
                                               metrics,   optimizer,            throughput, round_trips};
  int failures = 0;
  for (std::size_t i = 0; i < std::size(criteria); ++i) {
    Verdict v;
    try {
      v = criteria[i]();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %zu: %s %s\n", i + 1, v.pass ? "PASS" : "FAIL", v.detail.c_str());
    std::fflush(stdout);
    failures += !v.pass;
  }
  return failures == 0 ? 0 : 1;
}
