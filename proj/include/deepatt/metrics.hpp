#pragma once

// CoNLL-style span scoring. Each element of a pred/gold list holds the
// argument spans of one (sentence, predicate) instance; both lists must be
// aligned. Predicate (V) spans are left out unless score_verb is set.

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "deepatt/decoding.hpp"

namespace deepatt {

using PredicateSpans = std::vector<ArgumentSpan>;

struct ScoreOptions {
  bool score_verb = false;
};

struct PrfScore {
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t false_negative = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Fills P/R/F1 from the counts; any zero denominator yields 0.
PrfScore make_prf(std::size_t tp, std::size_t fp, std::size_t fn);

struct SpanScores {
  PrfScore overall;
  double complete = 0.0;  // fraction of predicates with pred set == gold set
  std::size_t predicates = 0;
};

SpanScores span_prf(const std::vector<PredicateSpans>& pred, const std::vector<PredicateSpans>& gold,
                    const ScoreOptions& options = {});

// Roles present in neither pred nor gold are omitted.
std::map<std::string, PrfScore> per_label_scores(const std::vector<PredicateSpans>& pred,
                                                 const std::vector<PredicateSpans>& gold,
                                                 const ScoreOptions& options = {});

// Boundary-matched spans with differing roles, keyed (pred role, gold role).
struct ConfusionMatrix {
  std::map<std::pair<std::string, std::string>, std::size_t> counts;
  std::map<std::string, std::size_t> gold_totals;

  // Share of the gold role's labeling errors that went to `pred_role`, in %.
  double percentage(const std::string& pred_role, const std::string& gold_role) const;
  std::vector<std::string> roles() const;
};

ConfusionMatrix confusion_matrix(const std::vector<PredicateSpans>& pred, const std::vector<PredicateSpans>& gold,
                                 const ScoreOptions& options = {});

struct IdentificationSplit {
  double identification = 0.0;   // unlabeled span F1, in %
  double classification = 0.0;   // role accuracy over boundary-matched spans, in %
  std::size_t boundary_matches = 0;
};

IdentificationSplit ident_vs_classify(const std::vector<PredicateSpans>& pred,
                                      const std::vector<PredicateSpans>& gold, const ScoreOptions& options = {});

struct EvaluationReport {
  SpanScores scores;
  std::map<std::string, PrfScore> per_label;
  ConfusionMatrix confusion;
  IdentificationSplit split;
};

EvaluationReport evaluate_spans(const std::vector<PredicateSpans>& pred, const std::vector<PredicateSpans>& gold,
                                const ScoreOptions& options = {});

// Human-readable table: one row per role, overall line, Comp, the
// identification/classification split and the confusion matrix.
std::string format_report(const EvaluationReport& report);
// `key=value` lines carrying the same numbers.
std::string format_report_kv(const EvaluationReport& report);

}  // namespace deepatt
