#include "deepatt/data_io.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "deepatt/text.hpp"

namespace deepatt {

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

void check_predicate_region(const LabeledSentence& s, const std::string& where) {
  std::size_t regions = 0;
  for (std::size_t t = 0; t < s.mask.size(); ++t)
    if (s.mask[t] == 1 && (t == 0 || s.mask[t - 1] == 0)) ++regions;
  if (regions != 1) {
    throw DataError(where + ": sentence must contain exactly one contiguous predicate region, found " +
                    std::to_string(regions));
  }
}

}  // namespace

Corpus parse_corpus_text(const std::string& text, const std::string& source) {
  Corpus corpus;
  LabeledSentence current;
  std::optional<std::size_t> columns;
  std::size_t sentence_start = 0;
  const auto flush = [&](std::size_t line_no) {
    if (current.words.empty()) return;
    check_predicate_region(current, source + ":" + std::to_string(sentence_start) + "-" + std::to_string(line_no));
    corpus.push_back(std::move(current));
    current = {};
  };

  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_whitespace(line);
    if (fields.empty()) {
      flush(line_no - 1);
      continue;
    }
    const std::string where = source + ":" + std::to_string(line_no);
    if (fields.size() != 2 && fields.size() != 3) {
      throw DataError(where + ": expected 2 or 3 columns, found " + std::to_string(fields.size()));
    }
    if (!columns) columns = fields.size();
    if (*columns != fields.size()) {
      throw DataError(where + ": ragged columns (" + std::to_string(fields.size()) + " here, " +
                      std::to_string(*columns) + " earlier)");
    }
    if (fields[1] != "0" && fields[1] != "1") throw DataError(where + ": mask must be 0 or 1, found '" + fields[1] + "'");
    if (current.words.empty()) sentence_start = line_no;
    current.words.push_back(fields[0]);
    current.mask.push_back(fields[1] == "1" ? 1 : 0);
    if (fields.size() == 3) {
      try {
        split_label(fields[2]);
      } catch (const DataError& e) {
        throw DataError(where + ": " + e.what());
      }
      current.tags.push_back(fields[2]);
    }
  }
  flush(line_no);
  return corpus;
}

Corpus parse_corpus(const std::string& path) { return parse_corpus_text(read_file(path), path); }

std::string serialize_corpus(const Corpus& corpus) {
  std::string out;
  for (const auto& s : corpus) {
    for (std::size_t t = 0; t < s.size(); ++t) {
      out += s.words[t];
      out += s.mask[t] ? " 1" : " 0";
      if (s.has_tags()) out += " " + s.tags[t];
      out += "\n";
    }
    out += "\n";
  }
  return out;
}

void write_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write corpus " + path);
  out << serialize_corpus(corpus);
}

// ---- vocabulary -----------------------------------------------------------

Vocabulary::Vocabulary() {
  add("<pad>");
  add("<unk>");
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  if (words.size() < 2 || words[0] != "<pad>" || words[1] != "<unk>") {
    throw DataError("vocabulary must start with <pad> and <unk>");
  }
  Vocabulary v;
  for (std::size_t i = 2; i < words.size(); ++i) {
    if (v.find(words[i])) throw DataError("duplicate vocabulary entry '" + words[i] + "'");
    v.add(words[i]);
  }
  return v;
}

std::optional<std::size_t> Vocabulary::find(const std::string& word) const {
  const auto it = index_.find(word);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Vocabulary::lookup(const std::string& word) const {
  if (auto id = find(word)) return *id;
  if (auto id = find(lowercase(word))) return *id;
  return kUnknown;
}

std::size_t Vocabulary::add(const std::string& word) {
  if (auto id = find(word)) return *id;
  index_.emplace(word, words_.size());
  words_.push_back(word);
  return words_.size() - 1;
}

Vocabulary build_vocab(const Corpus& corpus, std::size_t min_count) {
  if (min_count < 1) throw ConfigError("min_count must be at least 1");
  std::map<std::string, std::size_t> freq;
  for (const auto& s : corpus)
    for (const auto& w : s.words) ++freq[w];
  std::vector<std::pair<std::string, std::size_t>> entries(freq.begin(), freq.end());
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  for (const auto& [word, count] : entries)
    if (count >= min_count && word != "<pad>" && word != "<unk>") vocab.add(word);
  return vocab;
}

TagSet build_tagset(const Corpus& corpus) {
  std::vector<std::string> roles;
  for (const auto& s : corpus)
    for (const auto& tag : s.tags) {
      auto [prefix, role] = split_label(tag);
      if (prefix != TagPrefix::kOutside) roles.push_back(role);
    }
  return TagSet::from_roles(std::move(roles));
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& line : lines) out << line << "\n";
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

template <typename T>
std::size_t load_pretrained_embeddings(const std::string& path, const Vocabulary& vocab, std::size_t dim,
                                       Tensor<T>& table) {
  if (table.shape() != Shape{vocab.size(), dim}) {
    throw DataError("embedding table " + shape_to_string(table.shape()) + " does not match vocabulary size " +
                    std::to_string(vocab.size()) + " and dimension " + std::to_string(dim));
  }
  std::ifstream in(path);
  if (!in) throw DataError("cannot read embeddings " + path);
  std::unordered_map<std::string, std::vector<double>> vectors;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_whitespace(line);
    if (fields.empty()) continue;
    if (fields.size() != dim + 1) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                      " values, found " + std::to_string(fields.size() - 1));
    }
    std::vector<double> values(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      try {
        values[j] = parse_double(fields[j + 1], "embedding value");
      } catch (const ConfigError& e) {
        throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
    vectors.emplace(fields[0], std::move(values));
  }
  std::unordered_map<std::string, const std::vector<double>*> folded;
  for (const auto& [word, values] : vectors) {
    const auto key = lowercase(word);
    auto [it, fresh] = folded.emplace(key, &values);
    // Prefer the entry already in lowercase when several spellings fold together.
    if (!fresh && word == key) it->second = &values;
  }
  std::size_t replaced = 0;
  auto data = table.mutable_data();
  for (std::size_t id = 2; id < vocab.size(); ++id) {
    const std::vector<double>* vec = nullptr;
    if (auto it = vectors.find(vocab.word(id)); it != vectors.end()) {
      vec = &it->second;
    } else if (auto lo = folded.find(lowercase(vocab.word(id))); lo != folded.end()) {
      vec = lo->second;
    }
    if (vec == nullptr) continue;
    for (std::size_t j = 0; j < dim; ++j) data[id * dim + j] = T((*vec)[j]);
    ++replaced;
  }
  return replaced;
}

template std::size_t load_pretrained_embeddings<float>(const std::string&, const Vocabulary&, std::size_t,
                                                       Tensor<float>&);
template std::size_t load_pretrained_embeddings<double>(const std::string&, const Vocabulary&, std::size_t,
                                                        Tensor<double>&);

// ---- batching -------------------------------------------------------------

std::vector<std::vector<std::size_t>> batch_by_tokens(const std::vector<std::size_t>& lengths, std::size_t budget,
                                                      std::uint64_t seed) {
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] > budget) {
      throw DataError("sentence " + std::to_string(i) + " has " + std::to_string(lengths[i]) +
                      " tokens, more than the batch budget " + std::to_string(budget));
    }
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });

  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> current;
  std::size_t max_len = 0;
  for (std::size_t idx : order) {
    const std::size_t grown = std::max(max_len, lengths[idx]);
    if (!current.empty() && (current.size() + 1) * grown > budget) {
      batches.push_back(std::move(current));
      current.clear();
      max_len = 0;
    }
    current.push_back(idx);
    max_len = std::max(max_len, lengths[idx]);
  }
  if (!current.empty()) batches.push_back(std::move(current));
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

Batch make_batch(const std::vector<const LabeledSentence*>& sentences, const Vocabulary& vocab, const TagSet* tags) {
  Batch batch;
  batch.size = sentences.size();
  std::vector<std::size_t> lengths;
  for (const auto* s : sentences) {
    lengths.push_back(s->size());
    batch.max_len = std::max(batch.max_len, s->size());
  }
  batch.padding = build_padding_mask(lengths, batch.max_len);
  const std::size_t tokens = batch.size * batch.max_len;
  batch.words.assign(tokens, Vocabulary::kPad);
  batch.masks.assign(tokens, 0);
  batch.tags.assign(tokens, -1);
  for (std::size_t b = 0; b < sentences.size(); ++b) {
    const auto& s = *sentences[b];
    for (std::size_t t = 0; t < s.size(); ++t) {
      const std::size_t i = b * batch.max_len + t;
      batch.words[i] = vocab.lookup(s.words[t]);
      batch.masks[i] = s.mask[t];
      if (tags != nullptr && s.has_tags()) batch.tags[i] = static_cast<int>(tags->id(s.tags[t]));
    }
  }
  return batch;
}

// ---- synthetic corpus -----------------------------------------------------

Corpus generate_synthetic_corpus(std::size_t count, std::uint64_t seed) {
  using Phrase = std::vector<std::string>;
  const std::vector<Phrase> agents = {{"john"}, {"mary"}, {"the", "cat"}, {"the", "dog"}, {"a", "boy"},
                                      {"the", "teacher"}};
  const std::vector<std::string> verbs = {"gave", "sent", "threw", "showed", "sold", "brought"};
  const std::vector<Phrase> themes = {{"the", "book"}, {"a", "ball"}, {"an", "apple"}, {"the", "letter"},
                                      {"the", "car"}, {"the", "dog"}};
  const std::vector<Phrase> recipients = {{"to", "mary"}, {"to", "john"}, {"to", "the", "boy"},
                                          {"to", "the", "teacher"}};
  const std::vector<Phrase> locations = {{"in", "the", "park"}, {"at", "home"}, {"in", "the", "garden"}};
  const std::vector<Phrase> times = {{"yesterday"}, {"today"}, {"on", "monday"}, {"last", "week"}};

  std::mt19937_64 rng(seed);
  const auto pick = [&](const auto& pool) -> const auto& {
    return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
  };
  const auto chance = [&](double p) { return std::bernoulli_distribution(p)(rng); };

  Corpus corpus;
  corpus.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    LabeledSentence s;
    const auto append = [&](const Phrase& phrase, const std::string& role, bool predicate = false) {
      for (std::size_t k = 0; k < phrase.size(); ++k) {
        s.words.push_back(phrase[k]);
        s.mask.push_back(predicate ? 1 : 0);
        s.tags.push_back(role.empty() ? "O" : (k == 0 ? "B-" : "I-") + role);
      }
    };
    const bool time_first = chance(0.3);
    if (time_first) append(pick(times), "AM-TMP");
    append(pick(agents), "A0");
    append({pick(verbs)}, "V", true);
    append(pick(themes), "A1");
    if (chance(0.5)) append(pick(recipients), "A2");
    if (chance(0.4)) append(pick(locations), "AM-LOC");
    if (!time_first && chance(0.3)) append(pick(times), "AM-TMP");
    append({"."}, "");
    corpus.push_back(std::move(s));
  }
  return corpus;
}

}  // namespace deepatt
