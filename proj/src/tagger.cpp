#include "deepatt/tagger.hpp"

#include <algorithm>
#include <cmath>

namespace deepatt {

std::string to_string(DecodeMode mode) { return mode == DecodeMode::kArgmax ? "argmax" : "constrained"; }

DecodeMode parse_decode_mode(std::string_view text) {
  if (text == "argmax") return DecodeMode::kArgmax;
  if (text == "constrained") return DecodeMode::kConstrained;
  throw ConfigError("unknown decode mode '" + std::string(text) + "' (expected argmax or constrained)");
}

template <typename T>
std::vector<ScoreMatrix> Tagger<T>::probabilities(const Corpus& corpus, std::size_t token_budget) const {
  std::vector<ScoreMatrix> out(corpus.size());
  if (corpus.empty()) return out;
  std::vector<std::size_t> lengths;
  for (const auto& s : corpus) lengths.push_back(s.size());
  const std::size_t budget = std::max(token_budget, *std::max_element(lengths.begin(), lengths.end()));
  NoGradGuard no_grad;
  for (const auto& group : batch_by_tokens(lengths, budget, 0)) {
    std::vector<const LabeledSentence*> members;
    for (std::size_t idx : group) members.push_back(&corpus[idx]);
    const Batch batch = make_batch(members, vocab, nullptr);
    const Tensor<T> logits = forward_logits(batch, config, params);
    const std::size_t k = logits.dim(2);
    const auto values = logits.data();
    for (std::size_t b = 0; b < group.size(); ++b) {
      ScoreMatrix m{lengths[group[b]], k, std::vector<double>(lengths[group[b]] * k)};
      for (std::size_t t = 0; t < m.rows; ++t) {
        const std::size_t base = (b * batch.max_len + t) * k;
        double mx = -INFINITY;
        for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, static_cast<double>(values[base + c]));
        double total = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
          m.values[t * k + c] = std::exp(static_cast<double>(values[base + c]) - mx);
          total += m.values[t * k + c];
        }
        for (std::size_t c = 0; c < k; ++c) m.values[t * k + c] /= total;
      }
      out[group[b]] = std::move(m);
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> decode_distributions(const std::vector<std::vector<ScoreMatrix>>& per_model,
                                                           const TagSet& tags, DecodeMode mode) {
  if (per_model.empty()) return {};
  const std::size_t sentences = per_model[0].size();
  std::vector<std::vector<std::size_t>> out(sentences);
  for (std::size_t i = 0; i < sentences; ++i) {
    ScoreMatrix avg = per_model[0][i];
    for (std::size_t m = 1; m < per_model.size(); ++m) {
      const auto& other = per_model[m][i];
      if (other.rows != avg.rows || other.cols != avg.cols) throw DataError("ensemble members disagree on shapes");
      for (std::size_t j = 0; j < avg.values.size(); ++j) avg.values[j] += other.values[j];
    }
    for (auto& v : avg.values) v /= static_cast<double>(per_model.size());
    if (mode == DecodeMode::kArgmax) {
      out[i] = argmax_decode(avg);
    } else {
      for (auto& v : avg.values) v = std::log(std::max(v, 1e-300));
      out[i] = constrained_decode(avg, tags);
    }
  }
  return out;
}

Corpus apply_tags(const Corpus& corpus, const std::vector<std::vector<std::size_t>>& ids, const TagSet& tags) {
  Corpus out = corpus;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].tags.clear();
    for (std::size_t id : ids.at(i)) out[i].tags.push_back(tags.label(id));
  }
  return out;
}

template <typename T>
Corpus tag_corpus(const Tagger<T>& tagger, const Corpus& corpus, DecodeMode mode, std::size_t token_budget) {
  const auto ids = decode_distributions({tagger.probabilities(corpus, token_budget)}, tagger.tags, mode);
  return apply_tags(corpus, ids, tagger.tags);
}

std::vector<PredicateSpans> corpus_spans(const Corpus& corpus) {
  std::vector<PredicateSpans> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus) out.push_back(tags_to_spans(s.tags));
  return out;
}

void require_aligned_corpora(const Corpus& predicted, const Corpus& gold) {
  const std::size_t n = std::min(predicted.size(), gold.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (predicted[i].words != gold[i].words || predicted[i].mask != gold[i].mask) {
      throw DataError("corpora diverge at sentence " + std::to_string(i + 1) + " (words or predicate mask differ)");
    }
    if (predicted[i].tags.size() != gold[i].tags.size()) {
      throw DataError("sentence " + std::to_string(i + 1) + " is missing tags in one corpus");
    }
  }
  if (predicted.size() != gold.size()) {
    throw DataError("corpora diverge at sentence " + std::to_string(n + 1) + ": " + std::to_string(predicted.size()) +
                    " predicted vs " + std::to_string(gold.size()) + " gold sentences");
  }
}

double token_accuracy(const Corpus& predicted, const Corpus& gold) {
  require_aligned_corpora(predicted, gold);
  std::size_t total = 0, correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i)
    for (std::size_t t = 0; t < gold[i].tags.size(); ++t) {
      ++total;
      correct += predicted[i].tags[t] == gold[i].tags[t];
    }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

template struct Tagger<float>;
template struct Tagger<double>;
template Corpus tag_corpus<float>(const Tagger<float>&, const Corpus&, DecodeMode, std::size_t);
template Corpus tag_corpus<double>(const Tagger<double>&, const Corpus&, DecodeMode, std::size_t);

}  // namespace deepatt
