#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace deepatt {

enum class TagPrefix { kOutside, kBegin, kInside };

// Ordered BIO label inventory: id 0 is "O", then B-X, I-X per role.
class TagSet {
 public:
  TagSet();
  // Roles are sorted and deduplicated.
  static TagSet from_roles(std::vector<std::string> roles);
  // Explicit label order, e.g. read back from disk. Throws DataError when
  // "O" is not first or some I-X lacks its B-X.
  static TagSet from_labels(const std::vector<std::string>& labels);

  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::string& label(std::size_t id) const { return labels_.at(id); }
  TagPrefix prefix(std::size_t id) const { return prefixes_.at(id); }
  const std::string& role(std::size_t id) const { return roles_.at(id); }
  std::optional<std::size_t> find(std::string_view label) const;
  // Throws DataError for labels outside the set.
  std::size_t id(std::string_view label) const;

  // BIO validity of `current` following `previous` (nullopt = sentence start).
  bool allowed(std::optional<std::size_t> previous, std::size_t current) const;

  bool operator==(const TagSet& other) const { return labels_ == other.labels_; }

 private:
  void add(std::string label);

  std::vector<std::string> labels_;
  std::vector<TagPrefix> prefixes_;
  std::vector<std::string> roles_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Splits "B-A0" into its prefix and role. Throws DataError on anything that
// is not O, B-*, or I-*.
std::pair<TagPrefix, std::string> split_label(std::string_view label);

// Dense [rows, cols] score table (probabilities or log-probabilities).
struct ScoreMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

// Per-row argmax; ties go to the lowest id.
std::vector<std::size_t> argmax_decode(const ScoreMatrix& scores);

// Highest-total-score BIO-valid sequence (Viterbi over tag states).
std::vector<std::size_t> constrained_decode(const ScoreMatrix& log_probs, const TagSet& tags);

bool is_valid_bio(const std::vector<std::size_t>& sequence, const TagSet& tags);

struct ArgumentSpan {
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // inclusive
  std::string role;

  auto operator<=>(const ArgumentSpan&) const = default;
};

// Repairing span reader: a span takes the role of the tag that opened it;
// an I-X with no open span opens one with role X; O closes.
std::vector<ArgumentSpan> tags_to_spans(const std::vector<std::string>& labels);
std::vector<ArgumentSpan> tags_to_spans(const std::vector<std::size_t>& ids, const TagSet& tags);

// Inverse writer for non-overlapping spans.
std::vector<std::string> spans_to_tags(const std::vector<ArgumentSpan>& spans, std::size_t length);

}  // namespace deepatt
