#pragma once

// Corpus format: one token per line, whitespace-separated columns
//   word  mask(0|1)  [BIO tag]
// with a blank line after each sentence. A sentence with p predicates
// appears p times, once per predicate mask. The tag column is either present
// on every line of a file or on none (inference input).

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "deepatt/decoding.hpp"
#include "deepatt/encoder.hpp"
#include "deepatt/tensor.hpp"

namespace deepatt {

struct LabeledSentence {
  std::vector<std::string> words;
  std::vector<std::uint8_t> mask;
  std::vector<std::string> tags;  // empty when untagged

  std::size_t size() const { return words.size(); }
  bool has_tags() const { return !tags.empty(); }
  bool operator==(const LabeledSentence&) const = default;
};

using Corpus = std::vector<LabeledSentence>;

// Throws DataError naming `source` and the line number.
Corpus parse_corpus_text(const std::string& text, const std::string& source = "<memory>");
Corpus parse_corpus(const std::string& path);
std::string serialize_corpus(const Corpus& corpus);
void write_corpus(const std::string& path, const Corpus& corpus);

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnknown = 1;

  Vocabulary();
  // Ordered word list whose first two entries are <pad> and <unk>.
  static Vocabulary from_words(const std::vector<std::string>& words);

  std::size_t size() const { return words_.size(); }
  const std::string& word(std::size_t id) const { return words_.at(id); }
  const std::vector<std::string>& words() const { return words_; }
  std::optional<std::size_t> find(const std::string& word) const;
  // Exact match, then lowercase match, then kUnknown.
  std::size_t lookup(const std::string& word) const;
  std::size_t add(const std::string& word);

  bool operator==(const Vocabulary& other) const { return words_ == other.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Ids assigned by (frequency desc, word asc) over words seen >= min_count times.
Vocabulary build_vocab(const Corpus& corpus, std::size_t min_count = 1);
TagSet build_tagset(const Corpus& corpus);

// One entry per line; the line index is the id.
void write_lines(const std::string& path, const std::vector<std::string>& lines);
std::vector<std::string> read_lines(const std::string& path);

// Overwrites rows of `table` ([|V|, dim]) for words found in a `word v1 ... v_dim`
// text file (exact match first, lowercase fallback). Returns rows replaced.
template <typename T>
std::size_t load_pretrained_embeddings(const std::string& path, const Vocabulary& vocab, std::size_t dim,
                                       Tensor<T>& table);

// Shuffles by seed, groups similar lengths, then fills each batch greedily so
// that batch_size * max_len <= budget. Returns indices into `lengths`.
std::vector<std::vector<std::size_t>> batch_by_tokens(const std::vector<std::size_t>& lengths, std::size_t budget,
                                                      std::uint64_t seed);

// Padded id batch for the given sentences. Gold tags are filled when
// `tags` is non-null and the sentences carry them.
Batch make_batch(const std::vector<const LabeledSentence*>& sentences, const Vocabulary& vocab,
                 const TagSet* tags);

// Small template-grammar corpus (<= 40 word types, roles A0 A1 A2 AM-LOC
// AM-TMP plus V) used for memorization and smoke experiments.
Corpus generate_synthetic_corpus(std::size_t count, std::uint64_t seed);

}  // namespace deepatt
