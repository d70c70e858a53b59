#pragma once

// Inference over whole corpora: per-token tag distributions, decoding, and
// conversion of tagged corpora to predicate span lists.

#include <string>
#include <vector>

#include "deepatt/data_io.hpp"
#include "deepatt/decoding.hpp"
#include "deepatt/encoder.hpp"
#include "deepatt/metrics.hpp"

namespace deepatt {

enum class DecodeMode { kArgmax, kConstrained };

std::string to_string(DecodeMode mode);
DecodeMode parse_decode_mode(std::string_view text);

template <typename T>
struct Tagger {
  ModelConfig config;
  ModelParameters<T> params;
  Vocabulary vocab;
  TagSet tags;

  // Softmax distributions [n, K] per sentence, evaluation mode.
  std::vector<ScoreMatrix> probabilities(const Corpus& corpus, std::size_t token_budget = 4096) const;
};

// Decodes averaged distributions (one list per model) into tag ids.
std::vector<std::vector<std::size_t>> decode_distributions(const std::vector<std::vector<ScoreMatrix>>& per_model,
                                                           const TagSet& tags, DecodeMode mode);

// Copy of `corpus` with the tag column replaced by decoded labels.
Corpus apply_tags(const Corpus& corpus, const std::vector<std::vector<std::size_t>>& ids, const TagSet& tags);

template <typename T>
Corpus tag_corpus(const Tagger<T>& tagger, const Corpus& corpus, DecodeMode mode, std::size_t token_budget = 4096);

std::vector<PredicateSpans> corpus_spans(const Corpus& corpus);

// Fraction of tokens whose predicted label equals the gold label.
double token_accuracy(const Corpus& predicted, const Corpus& gold);

// Throws DataError naming the first sentence whose words or mask differ.
void require_aligned_corpora(const Corpus& predicted, const Corpus& gold);

}  // namespace deepatt
