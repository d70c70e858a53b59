#include "deepatt/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "deepatt/errors.hpp"

namespace deepatt {

namespace {

void require_aligned(const std::vector<PredicateSpans>& pred, const std::vector<PredicateSpans>& gold) {
  if (pred.size() != gold.size()) {
    throw DataError("metrics: " + std::to_string(pred.size()) + " predicted vs " + std::to_string(gold.size()) +
                    " gold predicate instances");
  }
}

std::set<ArgumentSpan> scored(const PredicateSpans& spans, const ScoreOptions& options) {
  std::set<ArgumentSpan> out;
  for (const auto& s : spans)
    if (options.score_verb || s.role != "V") out.insert(s);
  return out;
}

std::string fixed(double value, int decimals = 2) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, value);
  return buf;
}

}  // namespace

PrfScore make_prf(std::size_t tp, std::size_t fp, std::size_t fn) {
  PrfScore s{tp, fp, fn};
  s.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  s.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

SpanScores span_prf(const std::vector<PredicateSpans>& pred, const std::vector<PredicateSpans>& gold,
                    const ScoreOptions& options) {
  require_aligned(pred, gold);
  std::size_t tp = 0, fp = 0, fn = 0, complete = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto p = scored(pred[i], options);
    const auto g = scored(gold[i], options);
    std::size_t hit = 0;
    for (const auto& s : p) hit += g.count(s);
    tp += hit;
    fp += p.size() - hit;
    fn += g.size() - hit;
    if (p == g) ++complete;
  }
  SpanScores out;
  out.overall = make_prf(tp, fp, fn);
  out.predicates = pred.size();
  out.complete = pred.empty() ? 0.0 : static_cast<double>(complete) / static_cast<double>(pred.size());
  return out;
}

std::map<std::string, PrfScore> per_label_scores(const std::vector<PredicateSpans>& pred,
                                                 const std::vector<PredicateSpans>& gold,
                                                 const ScoreOptions& options) {
  require_aligned(pred, gold);
  struct Counts {
    std::size_t tp = 0, fp = 0, fn = 0;
  };
  std::map<std::string, Counts> counts;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto p = scored(pred[i], options);
    const auto g = scored(gold[i], options);
    for (const auto& s : p) (g.count(s) ? counts[s.role].tp : counts[s.role].fp)++;
    for (const auto& s : g)
      if (!p.count(s)) counts[s.role].fn++;
  }
  std::map<std::string, PrfScore> out;
  for (const auto& [role, c] : counts) out[role] = make_prf(c.tp, c.fp, c.fn);
  return out;
}

double ConfusionMatrix::percentage(const std::string& pred_role, const std::string& gold_role) const {
  const auto total = gold_totals.find(gold_role);
  if (total == gold_totals.end() || total->second == 0) return 0.0;
  const auto it = counts.find({pred_role, gold_role});
  const std::size_t c = it == counts.end() ? 0 : it->second;
  return 100.0 * static_cast<double>(c) / static_cast<double>(total->second);
}

std::vector<std::string> ConfusionMatrix::roles() const {
  std::set<std::string> roles;
  for (const auto& [key, c] : counts) {
    roles.insert(key.first);
    roles.insert(key.second);
  }
  return {roles.begin(), roles.end()};
}

ConfusionMatrix confusion_matrix(const std::vector<PredicateSpans>& pred, const std::vector<PredicateSpans>& gold,
                                 const ScoreOptions& options) {
  require_aligned(pred, gold);
  ConfusionMatrix out;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto g = scored(gold[i], options);
    for (const auto& p : scored(pred[i], options)) {
      for (const auto& s : g) {
        if (s.start == p.start && s.end == p.end && s.role != p.role) {
          out.counts[{p.role, s.role}]++;
          out.gold_totals[s.role]++;
        }
      }
    }
  }
  return out;
}

IdentificationSplit ident_vs_classify(const std::vector<PredicateSpans>& pred,
                                      const std::vector<PredicateSpans>& gold, const ScoreOptions& options) {
  require_aligned(pred, gold);
  std::size_t tp = 0, fp = 0, fn = 0, matched = 0, correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto p = scored(pred[i], options);
    const auto g = scored(gold[i], options);
    std::set<std::pair<std::size_t, std::size_t>> gold_bounds;
    for (const auto& s : g) gold_bounds.insert({s.start, s.end});
    std::set<std::pair<std::size_t, std::size_t>> pred_bounds;
    for (const auto& s : p) pred_bounds.insert({s.start, s.end});
    std::size_t hit = 0;
    for (const auto& b : pred_bounds) hit += gold_bounds.count(b);
    tp += hit;
    fp += pred_bounds.size() - hit;
    fn += gold_bounds.size() - hit;
    for (const auto& s : p) {
      for (const auto& t : g) {
        if (s.start == t.start && s.end == t.end) {
          ++matched;
          if (s.role == t.role) ++correct;
        }
      }
    }
  }
  IdentificationSplit out;
  out.identification = 100.0 * make_prf(tp, fp, fn).f1;
  out.boundary_matches = matched;
  out.classification = matched ? 100.0 * static_cast<double>(correct) / static_cast<double>(matched) : 0.0;
  return out;
}

EvaluationReport evaluate_spans(const std::vector<PredicateSpans>& pred, const std::vector<PredicateSpans>& gold,
                                const ScoreOptions& options) {
  return {span_prf(pred, gold, options), per_label_scores(pred, gold, options), confusion_matrix(pred, gold, options),
          ident_vs_classify(pred, gold, options)};
}

std::string format_report(const EvaluationReport& report) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-12s %10s %10s %10s\n", "Label", "Precision", "Recall", "F1");
  out << line;
  for (const auto& [role, s] : report.per_label) {
    std::snprintf(line, sizeof(line), "%-12s %10.2f %10.2f %10.2f\n", role.c_str(), 100 * s.precision,
                  100 * s.recall, 100 * s.f1);
    out << line;
  }
  const auto& o = report.scores.overall;
  std::snprintf(line, sizeof(line), "%-12s %10.2f %10.2f %10.2f\n", "Overall", 100 * o.precision, 100 * o.recall,
                100 * o.f1);
  out << line;
  out << "P=" << fixed(100 * o.precision) << " R=" << fixed(100 * o.recall) << " F1=" << fixed(100 * o.f1)
      << " Comp=" << fixed(100 * report.scores.complete) << " predicates=" << report.scores.predicates << "\n";
  out << "identified_spans=" << fixed(report.split.identification)
      << " classified_roles=" << fixed(report.split.classification) << "\n";

  const auto roles = report.confusion.roles();
  out << "confusion (rows: predicted, columns: gold, % of gold-label errors)\n";
  if (roles.empty()) {
    out << "  (no boundary-matched labeling errors)\n";
    return out.str();
  }
  std::snprintf(line, sizeof(line), "%-10s", "pred/gold");
  out << line;
  for (const auto& g : roles) {
    std::snprintf(line, sizeof(line), " %7s", g.c_str());
    out << line;
  }
  out << "\n";
  for (const auto& p : roles) {
    std::snprintf(line, sizeof(line), "%-10s", p.c_str());
    out << line;
    for (const auto& g : roles) {
      if (p == g) std::snprintf(line, sizeof(line), " %7s", "-");
      else std::snprintf(line, sizeof(line), " %7.0f", report.confusion.percentage(p, g));
      out << line;
    }
    out << "\n";
  }
  return out.str();
}

std::string format_report_kv(const EvaluationReport& report) {
  std::ostringstream out;
  const auto& o = report.scores.overall;
  out << "overall.precision=" << fixed(100 * o.precision, 4) << "\n"
      << "overall.recall=" << fixed(100 * o.recall, 4) << "\n"
      << "overall.f1=" << fixed(100 * o.f1, 4) << "\n"
      << "overall.comp=" << fixed(100 * report.scores.complete, 4) << "\n"
      << "overall.tp=" << o.true_positive << "\n"
      << "overall.fp=" << o.false_positive << "\n"
      << "overall.fn=" << o.false_negative << "\n"
      << "predicates=" << report.scores.predicates << "\n";
  for (const auto& [role, s] : report.per_label) {
    out << "label." << role << ".precision=" << fixed(100 * s.precision, 4) << "\n"
        << "label." << role << ".recall=" << fixed(100 * s.recall, 4) << "\n"
        << "label." << role << ".f1=" << fixed(100 * s.f1, 4) << "\n";
  }
  out << "split.identification=" << fixed(report.split.identification, 4) << "\n"
      << "split.classification=" << fixed(report.split.classification, 4) << "\n";
  for (const auto& [key, count] : report.confusion.counts) {
    out << "confusion." << key.first << "." << key.second << "="
        << fixed(report.confusion.percentage(key.first, key.second), 4) << "\n";
  }
  return out.str();
}

}  // namespace deepatt
