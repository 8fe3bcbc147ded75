#pragma once

// Strict entity-level micro P/R/F1 with sentence-level percentile bootstrap
// confidence intervals.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ragner/corpus.hpp"
#include "ragner/error.hpp"
#include "ragner/rng.hpp"

namespace ragner {

struct Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  Counts& operator+=(const Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const Counts&) const = default;
};

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Zero whenever a denominator is zero.
inline Prf prf(const Counts& c) {
  Prf m;
  if (c.tp + c.fp > 0) m.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) m.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (m.precision + m.recall > 0) m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

struct Interval {
  double lower = 0.0;
  double upper = 0.0;

  bool operator==(const Interval&) const = default;
};

struct MetricReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Interval precision_ci;
  Interval recall_ci;
  Interval f1_ci;
  std::size_t n_boot = 0;
  std::uint64_t seed = 0;
  double level = 0.95;
  std::size_t support = 0;    // gold spans
  std::size_t predicted = 0;  // predicted spans
};

struct SentenceSpans {
  std::string id;
  std::vector<EntitySpan> spans;
};

struct CorpusScore {
  Counts total;
  std::vector<Counts> per_sentence;  // in gold order
  MetricReport report;               // no CI
};

/// One-to-one strict matching inside one sentence: a predicted span is a
/// true positive iff an unmatched gold span has the same (start, end, type).
inline Counts match_spans(std::span<const EntitySpan> gold, std::span<const EntitySpan> pred) {
  std::map<EntitySpan, std::size_t> remaining;
  for (const auto& g : gold) ++remaining[g];
  Counts c;
  for (const auto& p : pred) {
    auto it = remaining.find(p);
    if (it != remaining.end() && it->second > 0) {
      --it->second;
      ++c.tp;
    } else {
      ++c.fp;
    }
  }
  c.fn = gold.size() - c.tp;
  return c;
}

inline MetricReport report_from_counts(const Counts& c) {
  MetricReport r;
  const auto m = prf(c);
  r.precision = m.precision;
  r.recall = m.recall;
  r.f1 = m.f1;
  r.support = c.tp + c.fn;
  r.predicted = c.tp + c.fp;
  return r;
}

/// Gold and prediction must cover the same sentence ids (in any order).
inline CorpusScore score_corpus(std::span<const SentenceSpans> gold, std::span<const SentenceSpans> pred) {
  if (gold.size() != pred.size()) {
    throw EvalError("gold has " + std::to_string(gold.size()) + " sentences, prediction " +
                    std::to_string(pred.size()));
  }
  std::unordered_map<std::string, const SentenceSpans*> by_id;
  for (const auto& p : pred) {
    if (!by_id.emplace(p.id, &p).second) throw EvalError("duplicate predicted sentence id " + p.id);
  }
  CorpusScore out;
  for (const auto& g : gold) {
    auto it = by_id.find(g.id);
    if (it == by_id.end()) throw EvalError("no prediction for sentence " + g.id);
    const auto c = match_spans(g.spans, it->second->spans);
    out.per_sentence.push_back(c);
    out.total += c;
  }
  out.report = report_from_counts(out.total);
  return out;
}

/// Linear interpolation between order statistics (position q * (n - 1)).
inline double percentile(std::span<const double> sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

struct BootstrapIntervals {
  Interval precision;
  Interval recall;
  Interval f1;
};

/// Resamples sentences with replacement `n_boot` times from one mt19937_64
/// stream seeded with `seed`; sentence indices are drawn with uniform_below.
inline BootstrapIntervals bootstrap_ci(std::span<const Counts> per_sentence, std::size_t n_boot, std::uint64_t seed,
                                       double level = 0.95) {
  if (n_boot == 0) throw EvalError("bootstrap_ci: n_boot must be >= 1");
  if (!(level > 0.0 && level < 1.0)) throw EvalError("bootstrap_ci: level must be in (0, 1)");
  if (per_sentence.empty()) throw EvalError("bootstrap_ci: no sentences");
  Rng rng(seed);
  const std::size_t n = per_sentence.size();
  std::vector<double> ps, rs, fs;
  ps.reserve(n_boot);
  rs.reserve(n_boot);
  fs.reserve(n_boot);
  for (std::size_t b = 0; b < n_boot; ++b) {
    Counts c;
    for (std::size_t i = 0; i < n; ++i) c += per_sentence[uniform_below(rng, n)];
    const auto m = prf(c);
    ps.push_back(m.precision);
    rs.push_back(m.recall);
    fs.push_back(m.f1);
  }
  const double lo_q = (1.0 - level) / 2.0;
  const double hi_q = 1.0 - lo_q;
  BootstrapIntervals out;
  for (auto [vals, iv] : {std::pair{&ps, &out.precision}, std::pair{&rs, &out.recall}, std::pair{&fs, &out.f1}}) {
    std::sort(vals->begin(), vals->end());
    iv->lower = percentile(*vals, lo_q);
    iv->upper = percentile(*vals, hi_q);
  }
  return out;
}

/// Point estimates plus bootstrap intervals for one run.
inline MetricReport evaluate_run(std::span<const Counts> per_sentence, std::size_t n_boot, std::uint64_t seed,
                                 double level = 0.95) {
  Counts total;
  for (const auto& c : per_sentence) total += c;
  auto r = report_from_counts(total);
  r.n_boot = n_boot;
  r.seed = seed;
  r.level = level;
  if (!per_sentence.empty()) {
    const auto ci = bootstrap_ci(per_sentence, n_boot, seed, level);
    r.precision_ci = ci.precision;
    r.recall_ci = ci.recall;
    r.f1_ci = ci.f1;
  }
  return r;
}

struct AggregateReport {
  MetricReport mean;
  std::vector<MetricReport> runs;
};

/// Arithmetic mean of the per-run scores (not F1 of pooled counts). The
/// interval bounds are averaged the same way.
inline AggregateReport aggregate_runs(std::span<const MetricReport> reports) {
  if (reports.empty()) throw EvalError("aggregate_runs: no reports");
  AggregateReport agg;
  agg.runs.assign(reports.begin(), reports.end());
  const double n = static_cast<double>(reports.size());
  auto& m = agg.mean;
  m.n_boot = reports.front().n_boot;
  m.seed = reports.front().seed;
  m.level = reports.front().level;
  for (const auto& r : reports) {
    m.precision += r.precision / n;
    m.recall += r.recall / n;
    m.f1 += r.f1 / n;
    m.precision_ci.lower += r.precision_ci.lower / n;
    m.precision_ci.upper += r.precision_ci.upper / n;
    m.recall_ci.lower += r.recall_ci.lower / n;
    m.recall_ci.upper += r.recall_ci.upper / n;
    m.f1_ci.lower += r.f1_ci.lower / n;
    m.f1_ci.upper += r.f1_ci.upper / n;
    m.support += r.support;
    m.predicted += r.predicted;
  }
  m.support = static_cast<std::size_t>(std::llround(static_cast<double>(m.support) / n));
  m.predicted = static_cast<std::size_t>(std::llround(static_cast<double>(m.predicted) / n));
  return agg;
}

inline nlohmann::json to_json(const MetricReport& r) {
  auto iv = [](const Interval& i) { return nlohmann::json::array({i.lower, i.upper}); };
  return {{"precision", r.precision},
          {"recall", r.recall},
          {"f1", r.f1},
          {"ci", {{"precision", iv(r.precision_ci)}, {"recall", iv(r.recall_ci)}, {"f1", iv(r.f1_ci)}}},
          {"n_boot", r.n_boot},
          {"seed", r.seed},
          {"level", r.level},
          {"support", r.support},
          {"predicted", r.predicted}};
}

}  // namespace ragner
