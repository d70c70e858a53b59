#include "deepatt/decoding.hpp"

#include <algorithm>
#include <limits>
#include <set>

#include "deepatt/errors.hpp"

namespace deepatt {

std::pair<TagPrefix, std::string> split_label(std::string_view label) {
  if (label == "O") return {TagPrefix::kOutside, ""};
  if (label.size() > 2 && label[1] == '-') {
    if (label[0] == 'B') return {TagPrefix::kBegin, std::string(label.substr(2))};
    if (label[0] == 'I') return {TagPrefix::kInside, std::string(label.substr(2))};
  }
  throw DataError("invalid BIO label '" + std::string(label) + "'");
}

TagSet::TagSet() { add("O"); }

void TagSet::add(std::string label) {
  auto [prefix, role] = split_label(label);
  index_.emplace(label, labels_.size());
  labels_.push_back(std::move(label));
  prefixes_.push_back(prefix);
  roles_.push_back(std::move(role));
}

TagSet TagSet::from_roles(std::vector<std::string> roles) {
  std::sort(roles.begin(), roles.end());
  roles.erase(std::unique(roles.begin(), roles.end()), roles.end());
  TagSet tags;
  for (const auto& role : roles) {
    if (role.empty()) throw DataError("empty role name");
    tags.add("B-" + role);
    tags.add("I-" + role);
  }
  return tags;
}

TagSet TagSet::from_labels(const std::vector<std::string>& labels) {
  if (labels.empty() || labels[0] != "O") throw DataError("tag set must start with 'O'");
  TagSet tags;
  std::set<std::string> begins;
  for (std::size_t i = 1; i < labels.size(); ++i) {
    if (tags.index_.count(labels[i])) throw DataError("duplicate tag '" + labels[i] + "'");
    tags.add(labels[i]);
    if (tags.prefixes_.back() == TagPrefix::kOutside) throw DataError("'O' may appear only once");
    if (tags.prefixes_.back() == TagPrefix::kBegin) begins.insert(tags.roles_.back());
  }
  for (std::size_t i = 1; i < tags.size(); ++i) {
    if (tags.prefixes_[i] == TagPrefix::kInside && !begins.count(tags.roles_[i])) {
      throw DataError("tag '" + tags.labels_[i] + "' has no matching B- tag");
    }
  }
  return tags;
}

std::optional<std::size_t> TagSet::find(std::string_view label) const {
  const auto it = index_.find(std::string(label));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t TagSet::id(std::string_view label) const {
  if (auto found = find(label)) return *found;
  throw DataError("tag '" + std::string(label) + "' is not in the tag set");
}

bool TagSet::allowed(std::optional<std::size_t> previous, std::size_t current) const {
  if (prefixes_[current] != TagPrefix::kInside) return true;
  if (!previous) return false;
  return prefixes_[*previous] != TagPrefix::kOutside && roles_[*previous] == roles_[current];
}

std::vector<std::size_t> argmax_decode(const ScoreMatrix& scores) {
  std::vector<std::size_t> out(scores.rows, 0);
  for (std::size_t r = 0; r < scores.rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < scores.cols; ++c)
      if (scores.at(r, c) > scores.at(r, best)) best = c;
    out[r] = best;
  }
  return out;
}

std::vector<std::size_t> constrained_decode(const ScoreMatrix& log_probs, const TagSet& tags) {
  const std::size_t n = log_probs.rows, k = log_probs.cols;
  if (n == 0) return {};
  if (k != tags.size()) {
    throw ShapeError("constrained_decode: " + std::to_string(k) + " score columns for " +
                     std::to_string(tags.size()) + " tags");
  }
  constexpr double kImpossible = -std::numeric_limits<double>::infinity();
  std::vector<double> best(n * k, kImpossible);
  std::vector<std::size_t> back(n * k, 0);
  for (std::size_t c = 0; c < k; ++c)
    if (tags.allowed(std::nullopt, c)) best[c] = log_probs.at(0, c);
  for (std::size_t t = 1; t < n; ++t) {
    for (std::size_t c = 0; c < k; ++c) {
      double top = kImpossible;
      std::size_t arg = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const double s = best[(t - 1) * k + p];
        if (s > top && tags.allowed(p, c)) {
          top = s;
          arg = p;
        }
      }
      if (top > kImpossible) {
        best[t * k + c] = top + log_probs.at(t, c);
        back[t * k + c] = arg;
      }
    }
  }
  std::vector<std::size_t> path(n, 0);
  std::size_t last = 0;
  for (std::size_t c = 1; c < k; ++c)
    if (best[(n - 1) * k + c] > best[(n - 1) * k + last]) last = c;
  path[n - 1] = last;
  for (std::size_t t = n - 1; t > 0; --t) path[t - 1] = back[t * k + path[t]];
  return path;
}

bool is_valid_bio(const std::vector<std::size_t>& sequence, const TagSet& tags) {
  std::optional<std::size_t> previous;
  for (std::size_t id : sequence) {
    if (id >= tags.size() || !tags.allowed(previous, id)) return false;
    previous = id;
  }
  return true;
}

std::vector<ArgumentSpan> tags_to_spans(const std::vector<std::string>& labels) {
  std::vector<ArgumentSpan> spans;
  std::optional<ArgumentSpan> open;
  const auto close = [&] {
    if (open) spans.push_back(*open);
    open.reset();
  };
  for (std::size_t t = 0; t < labels.size(); ++t) {
    auto [prefix, role] = split_label(labels[t]);
    switch (prefix) {
      case TagPrefix::kOutside: close(); break;
      case TagPrefix::kBegin:
        close();
        open = ArgumentSpan{t, t, role};
        break;
      case TagPrefix::kInside:
        if (open) open->end = t;
        else open = ArgumentSpan{t, t, role};
        break;
    }
  }
  close();
  return spans;
}

std::vector<ArgumentSpan> tags_to_spans(const std::vector<std::size_t>& ids, const TagSet& tags) {
  std::vector<std::string> labels;
  labels.reserve(ids.size());
  for (std::size_t id : ids) labels.push_back(tags.label(id));
  return tags_to_spans(labels);
}

std::vector<std::string> spans_to_tags(const std::vector<ArgumentSpan>& spans, std::size_t length) {
  std::vector<std::string> labels(length, "O");
  for (const auto& span : spans) {
    if (span.start > span.end || span.end >= length) throw DataError("span out of range");
    for (std::size_t t = span.start; t <= span.end; ++t) {
      if (labels[t] != "O") throw DataError("overlapping spans");
      labels[t] = (t == span.start ? "B-" : "I-") + span.role;
    }
  }
  return labels;
}

}  // namespace deepatt
