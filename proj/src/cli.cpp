#include "deepatt/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "deepatt/bench.hpp"
#include "deepatt/checkpoint.hpp"
#include "deepatt/config.hpp"
#include "deepatt/data_io.hpp"
#include "deepatt/gradcheck.hpp"
#include "deepatt/metrics.hpp"
#include "deepatt/tagger.hpp"
#include "deepatt/text.hpp"
#include "deepatt/training.hpp"

namespace deepatt {

namespace {

// Copies every character to two streams.
class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

 protected:
  int overflow(int c) override {
    if (c == EOF) return !EOF;
    const bool ok = a_->sputc(static_cast<char>(c)) != EOF && b_->sputc(static_cast<char>(c)) != EOF;
    return ok ? c : EOF;
  }
  int sync() override { return (a_->pubsync() == 0 && b_->pubsync() == 0) ? 0 : -1; }

 private:
  std::streambuf* a_;
  std::streambuf* b_;
};

std::string words_path(const std::string& checkpoint) { return checkpoint + ".words"; }
std::string tags_path(const std::string& checkpoint) { return checkpoint + ".tags"; }

void write_text(const std::string& path, const std::string& text, std::ostream& fallback) {
  if (path.empty() || path == "-") {
    fallback << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << text;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool f64 = false;
  std::string checkpoint_dir;
};

template <typename T>
int train_with(const RunConfig& run, std::ostream& out) {
  if (run.train_path.empty()) throw ConfigError("config has no train path");
  const Corpus train = parse_corpus(run.train_path);
  std::optional<Corpus> dev;
  if (!run.dev_path.empty()) dev = parse_corpus(run.dev_path);
  std::optional<Corpus> test;
  if (!run.test_path.empty()) test = parse_corpus(run.test_path);
  const Vocabulary vocab = build_vocab(train, run.min_count);
  const TagSet tags = build_tagset(train);

  std::filesystem::create_directories(run.checkpoint_dir);
  const std::string checkpoint = (std::filesystem::path(run.checkpoint_dir) / "model.ckpt").string();
  write_lines(words_path(checkpoint), vocab.words());
  write_lines(tags_path(checkpoint), tags.labels());
  run.save((std::filesystem::path(run.checkpoint_dir) / "run.cfg").string());

  std::optional<ModelParameters<T>> initial;
  if (!run.embeddings_path.empty()) {
    std::mt19937_64 rng(run.seed);
    initial = init_parameters<T>(run.model, vocab.size(), tags.size(), rng);
    const std::size_t replaced =
        load_pretrained_embeddings(run.embeddings_path, vocab, run.model.word_dim, initial->word_embedding);
    out << "pretrained_rows=" << replaced << "\n";
  }

  std::ofstream metrics((std::filesystem::path(run.checkpoint_dir) / "metrics.log").string(), std::ios::app);
  if (!metrics) throw DataError("cannot write metrics log in " + run.checkpoint_dir);
  TeeBuf tee(out.rdbuf(), metrics.rdbuf());
  std::ostream log(&tee);

  TrainOptions options{&log, checkpoint};
  const auto result = train_loop<T>(train, dev ? &*dev : nullptr, vocab, tags, run.model, run.schedule, run.seed,
                                    options, initial ? &*initial : nullptr);
  log.flush();

  const Tagger<T> tagger{run.model, result.best_params, vocab, tags};
  const Corpus predicted = tag_corpus(tagger, train, run.decode, run.schedule.token_budget);
  const double f1 = span_prf(corpus_spans(predicted), corpus_spans(train)).overall.f1;
  out << "checkpoint=" << checkpoint << "\n";
  out << "train_token_accuracy=" << format_double(token_accuracy(predicted, train)) << "\n";
  out << "train_span_f1=" << format_double(100.0 * f1) << "\n";
  if (result.best_dev_f1) out << "best_dev_f1=" << format_double(*result.best_dev_f1) << "\n";
  if (test) {
    const Corpus tagged = tag_corpus(tagger, *test, run.decode, run.schedule.token_budget);
    out << "test_span_f1=" << format_double(100.0 * span_prf(corpus_spans(tagged), corpus_spans(*test)).overall.f1)
        << "\n";
  }
  return kExitOk;
}

int cmd_train(const TrainArgs& args, std::ostream& out) {
  RunConfig run = RunConfig::load(args.config_path);
  if (args.seed) run.seed = *args.seed;
  if (args.f64) run.f64 = true;
  if (!args.checkpoint_dir.empty()) run.checkpoint_dir = args.checkpoint_dir;
  run.validate();
  return run.f64 ? train_with<double>(run, out) : train_with<float>(run, out);
}

// ---- tag --------------------------------------------------------------------

struct TagArgs {
  std::string config_path;
  std::string checkpoint;
  std::vector<std::string> checkpoints;
  std::string decode;
  std::string input;
  std::string output;
  bool f64 = false;
  std::size_t budget = 4096;
};

template <typename T>
Tagger<T> load_tagger(const std::string& path) {
  auto ckpt = load_checkpoint<T>(path);
  Tagger<T> tagger{ckpt.config, std::move(ckpt.params), Vocabulary::from_words(read_lines(words_path(path))),
                   TagSet::from_labels(read_lines(tags_path(path)))};
  if (tagger.vocab.size() != tagger.params.vocab_size()) {
    throw DataError(path + ": vocabulary has " + std::to_string(tagger.vocab.size()) + " entries but the checkpoint " +
                    std::to_string(tagger.params.vocab_size()));
  }
  if (tagger.tags.size() != tagger.params.num_tags()) {
    throw DataError(path + ": tag set has " + std::to_string(tagger.tags.size()) + " labels but the checkpoint " +
                    std::to_string(tagger.params.num_tags()));
  }
  return tagger;
}

template <typename T>
int tag_with(const TagArgs& args, DecodeMode mode, std::ostream& out) {
  std::vector<std::string> paths = args.checkpoints;
  if (!args.checkpoint.empty()) paths.insert(paths.begin(), args.checkpoint);
  if (paths.empty()) throw ConfigError("tag needs --checkpoint or --checkpoints");
  const Corpus corpus = parse_corpus(args.input);

  std::vector<std::vector<ScoreMatrix>> per_model;
  std::optional<TagSet> tags;
  for (const auto& path : paths) {
    const Tagger<T> tagger = load_tagger<T>(path);
    if (tags && !(*tags == tagger.tags)) throw DataError(path + ": tag set differs from the other ensemble members");
    tags = tagger.tags;
    per_model.push_back(tagger.probabilities(corpus, args.budget));
  }
  const Corpus tagged = apply_tags(corpus, decode_distributions(per_model, *tags, mode), *tags);
  write_text(args.output, serialize_corpus(tagged), out);
  return kExitOk;
}

int cmd_tag(const TagArgs& args, std::ostream& out) {
  DecodeMode mode = DecodeMode::kArgmax;
  bool f64 = args.f64;
  if (!args.config_path.empty()) {
    const RunConfig run = RunConfig::load(args.config_path);
    mode = run.decode;
    f64 = f64 || run.f64;
  }
  if (!args.decode.empty()) mode = parse_decode_mode(args.decode);
  return f64 ? tag_with<double>(args, mode, out) : tag_with<float>(args, mode, out);
}

// ---- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string gold;
  std::string pred;
  bool kv = false;
  bool score_verb = false;
};

int cmd_eval(const EvalArgs& args, std::ostream& out) {
  const Corpus gold = parse_corpus(args.gold);
  const Corpus pred = parse_corpus(args.pred);
  require_aligned_corpora(pred, gold);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (!gold[i].has_tags()) throw DataError(args.gold + ": sentence " + std::to_string(i + 1) + " has no tags");
  }
  const auto report = evaluate_spans(corpus_spans(pred), corpus_spans(gold), ScoreOptions{args.score_verb});
  out << (args.kv ? format_report_kv(report) : format_report(report));
  return kExitOk;
}

// ---- gradcheck --------------------------------------------------------------

int cmd_gradcheck(const GradCheckOptions& options, std::ostream& out, std::ostream& err) {
  bool all = true;
  for (const auto& r : run_gradcheck(options)) {
    out << format_gradcheck_line(r) << "\n";
    if (!r.pass) {
      all = false;
      err << "gradient check failed: " << r.op << " max_rel_err=" << r.max_rel_err << "\n";
    }
  }
  return all ? kExitOk : kExitNumeric;
}

// ---- bench ------------------------------------------------------------------

struct BenchArgs {
  std::string config_path;
  std::optional<std::string> lengths;
  std::string kinds = "ffn,cnn,rnn";
  std::optional<std::size_t> depth;
  std::size_t batch = 1;
  std::size_t repeats = 5;
  std::uint64_t seed = 1;
  std::string output;
};

int cmd_bench(const BenchArgs& args, std::ostream& out) {
  ModelConfig config;
  if (!args.config_path.empty()) config = RunConfig::load(args.config_path).model;
  if (args.depth) config.depth = *args.depth;
  BenchOptions options;
  options.batch = args.batch;
  options.repeats = args.repeats;
  options.seed = args.seed;
  options.kinds.clear();
  for (const auto& k : split(args.kinds, ',')) {
    if (!trim(k).empty()) options.kinds.push_back(parse_sublayer_kind(trim(k)));
  }
  for (const auto& n : split(args.lengths.value_or("25,50,100,200"), ',')) {
    if (!trim(n).empty()) options.lengths.push_back(parse_size(trim(n), "length"));
  }
  write_text(args.output, format_bench_csv(run_bench(config, options)), out);
  return kExitOk;
}

// ---- synth ------------------------------------------------------------------

struct SynthArgs {
  std::size_t count = 50;
  std::uint64_t seed = 1;
  std::string output;
};

int cmd_synth(const SynthArgs& args, std::ostream& out) {
  write_text(args.output, serialize_corpus(generate_synthetic_corpus(args.count, args.seed)), out);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"DeepAtt self-attention semantic role tagger", "deepatt"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a model from a run config");
  train_cmd->add_option("--config", train.config_path, "run config file")->required();
  train_cmd->add_option("--seed", train.seed, "override the config seed");
  train_cmd->add_flag("--f64", train.f64, "64-bit arithmetic");
  train_cmd->add_option("--checkpoint-dir", train.checkpoint_dir, "override the config checkpoint_dir");

  TagArgs tag;
  auto* tag_cmd = app.add_subcommand("tag", "tag a corpus with a trained model");
  tag_cmd->add_option("--config", tag.config_path, "run config (decode mode, precision)");
  tag_cmd->add_option("--checkpoint", tag.checkpoint, "checkpoint file");
  tag_cmd->add_option("--checkpoints", tag.checkpoints, "ensemble members; distributions are averaged")
      ->delimiter(',');
  tag_cmd->add_option("--decode", tag.decode, "argmax or constrained");
  tag_cmd->add_option("--input", tag.input, "corpus to tag")->required();
  tag_cmd->add_option("--output", tag.output, "output path (default stdout)");
  tag_cmd->add_flag("--f64", tag.f64, "64-bit arithmetic");
  tag_cmd->add_option("--budget", tag.budget, "tokens per inference batch");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "score predicted tags against gold tags");
  eval_cmd->add_option("--gold", eval.gold, "gold corpus")->required();
  eval_cmd->add_option("--pred", eval.pred, "predicted corpus")->required();
  eval_cmd->add_flag("--kv", eval.kv, "key=value output");
  eval_cmd->add_flag("--score-verb", eval.score_verb, "include V spans in the scores");

  GradCheckOptions gradcheck;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks in 64-bit mode");
  grad_cmd->add_option("--seed", gradcheck.base_seed, "base seed");
  grad_cmd->add_option("--seeds", gradcheck.seeds, "random instances per op");
  grad_cmd->add_option("--corrupt", gradcheck.corrupt, "perturb one op's analytic gradient (negative control)");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "forward-pass throughput per sub-layer kind");
  bench_cmd->add_option("--config", bench.config_path, "run config supplying the model shape");
  bench_cmd->add_option("--lengths", bench.lengths, "comma-separated sentence lengths");
  bench_cmd->add_option("--kinds", bench.kinds, "comma-separated sub-layer kinds");
  bench_cmd->add_option("--depth", bench.depth, "override the layer count");
  bench_cmd->add_option("--batch", bench.batch, "sentences per forward pass");
  bench_cmd->add_option("--repeats", bench.repeats, "timed runs per cell");
  bench_cmd->add_option("--seed", bench.seed, "parameter seed");
  bench_cmd->add_option("--output", bench.output, "CSV path (default stdout)");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic toy corpus");
  synth_cmd->add_option("--count", synth.count, "sentences");
  synth_cmd->add_option("--seed", synth.seed, "generator seed");
  synth_cmd->add_option("--output", synth.output, "output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train, out);
    if (*tag_cmd) return cmd_tag(tag, out);
    if (*eval_cmd) return cmd_eval(eval, out);
    if (*grad_cmd) return cmd_gradcheck(gradcheck, out, err);
    if (*bench_cmd) return cmd_bench(bench, out);
    if (*synth_cmd) return cmd_synth(synth, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace deepatt
