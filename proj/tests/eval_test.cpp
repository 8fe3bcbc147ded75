#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace ragner;

namespace {

std::vector<EntitySpan> random_spans(std::mt19937& g, std::size_t max_n) {
  std::vector<EntitySpan> out;
  const auto n = g() % (max_n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t start = g() % 4;
    out.push_back({start, start + 1 + g() % 2, g() % 2 ? "A" : "B"});
  }
  return out;
}

/// Per-sentence counts of a corrupted prediction over the impacts test split.
std::vector<Counts> fixture_counts() {
  const auto d = oracle::impacts();
  const auto a = LabelAlphabet::from_types(d.entity_types);
  std::vector<Counts> out;
  std::uint64_t seed = 1;
  for (const auto& s : d.test) {
    auto pred = corrupt_labels(s.labels, a, 0.3, seed++);
    canonicalize_labels(pred);
    out.push_back(match_spans(extract_spans(s), extract_spans(pred)));
  }
  return out;
}

}  // namespace

TEST(Metrics, HandCase) {
  const std::vector<EntitySpan> gold{{3, 5, "T"}};
  const std::vector<EntitySpan> pred{{3, 5, "T"}, {0, 1, "T"}};
  const auto c = match_spans(gold, pred);
  EXPECT_EQ(c, (Counts{1, 1, 0}));
  const auto m = prf(c);
  EXPECT_NEAR(m.precision, 0.5, 1e-9);
  EXPECT_NEAR(m.recall, 1.0, 1e-9);
  EXPECT_NEAR(m.f1, 2.0 / 3.0, 1e-9);
}

TEST(Metrics, ZeroDenominators) {
  const auto m = prf({0, 0, 0});
  EXPECT_EQ(m.precision, 0.0);
  EXPECT_EQ(m.recall, 0.0);
  EXPECT_EQ(m.f1, 0.0);
  EXPECT_EQ(prf({0, 3, 0}).recall, 0.0);
}

TEST(Metrics, StrictBoundariesAndTypes) {
  const std::vector<EntitySpan> gold{{0, 2, "A"}};
  EXPECT_EQ(match_spans(gold, std::vector<EntitySpan>{{0, 1, "A"}}).tp, 0u);
  EXPECT_EQ(match_spans(gold, std::vector<EntitySpan>{{0, 2, "B"}}).tp, 0u);
  // Duplicate predictions match one gold span at most once.
  EXPECT_EQ(match_spans(gold, std::vector<EntitySpan>{{0, 2, "A"}, {0, 2, "A"}}), (Counts{1, 1, 0}));
}

TEST(Metrics, MatchesExhaustiveMatcher) {
  std::mt19937 g(4);
  for (int corpus = 0; corpus < 200; ++corpus) {
    Counts lib, ref;
    for (int s = 0; s < 10; ++s) {
      const auto gold = random_spans(g, 5), pred = random_spans(g, 5);
      lib += match_spans(gold, pred);
      ref += oracle::exhaustive_counts(gold, pred);
    }
    ASSERT_EQ(lib, ref) << corpus;
  }
}

TEST(Metrics, ScoreCorpusById) {
  const std::vector<SentenceSpans> gold{{"a", {{0, 1, "X"}}}, {"b", {}}};
  const std::vector<SentenceSpans> pred{{"b", {{1, 2, "X"}}}, {"a", {{0, 1, "X"}}}};
  const auto sc = score_corpus(gold, pred);
  EXPECT_EQ(sc.total, (Counts{1, 1, 0}));
  EXPECT_EQ(sc.per_sentence[1], (Counts{0, 1, 0}));
  EXPECT_THROW(score_corpus(gold, std::vector<SentenceSpans>{{"a", {}}}), EvalError);
  EXPECT_THROW(score_corpus(gold, std::vector<SentenceSpans>{{"a", {}}, {"c", {}}}), EvalError);
  EXPECT_THROW(score_corpus(gold, std::vector<SentenceSpans>{{"a", {}}, {"a", {}}}), EvalError);
}

TEST(Bootstrap, MatchesReplayOracle) {
  const auto counts = fixture_counts();
  const auto ci = bootstrap_ci(counts, 1000, 42, 0.95);
  const auto ref = oracle::replay_bootstrap(counts, 1000, 42, 0.95);
  EXPECT_EQ(ci.precision.lower, ref.p_lo);
  EXPECT_EQ(ci.precision.upper, ref.p_hi);
  EXPECT_EQ(ci.recall.lower, ref.r_lo);
  EXPECT_EQ(ci.recall.upper, ref.r_hi);
  EXPECT_EQ(ci.f1.lower, ref.f_lo);
  EXPECT_EQ(ci.f1.upper, ref.f_hi);
}

TEST(Bootstrap, Properties) {
  const auto counts = fixture_counts();
  const auto wide = bootstrap_ci(counts, 1000, 42, 0.95);
  const auto narrow = bootstrap_ci(counts, 1000, 42, 0.80);
  EXPECT_LE(wide.f1.lower, narrow.f1.lower);
  EXPECT_GE(wide.f1.upper, narrow.f1.upper);
  EXPECT_LE(wide.precision.lower, narrow.precision.lower);
  EXPECT_GE(wide.recall.upper, narrow.recall.upper);

  const auto point = prf([&] {
    Counts c;
    for (const auto& x : counts) c += x;
    return c;
  }());
  EXPECT_LE(wide.f1.lower, point.f1);
  EXPECT_GE(wide.f1.upper, point.f1);

  const std::vector<Counts> same(20, Counts{2, 1, 1});
  const auto degenerate = bootstrap_ci(same, 500, 7);
  EXPECT_EQ(degenerate.f1.lower, degenerate.f1.upper);
  EXPECT_NEAR(degenerate.f1.lower, 2.0 / 3.0, 1e-12);

  EXPECT_THROW(bootstrap_ci(counts, 0, 1), EvalError);
  EXPECT_THROW(bootstrap_ci(counts, 10, 1, 1.0), EvalError);
  EXPECT_THROW(bootstrap_ci({}, 10, 1), EvalError);
}

TEST(Bootstrap, Percentile) {
  const std::vector<double> v{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(percentile(v, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(percentile(v, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(percentile(v, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(percentile(v, 0.25), 1.75);
}

TEST(Aggregate, ArithmeticMeanOfRuns) {
  std::vector<MetricReport> runs;
  for (double f : {24.70, 26.20, 26.30, 33.20}) {
    MetricReport r;
    r.f1 = f;
    r.f1_ci = {f - 1, f + 1};
    runs.push_back(r);
  }
  const auto agg = aggregate_runs(runs);
  EXPECT_NEAR(agg.mean.f1, 27.60, 1e-9);
  EXPECT_NEAR(agg.mean.f1_ci.lower, 26.60, 1e-9);
  EXPECT_EQ(agg.runs.size(), 4u);
  EXPECT_THROW(aggregate_runs({}), EvalError);
}

TEST(Aggregate, MeanIsNotPooledF1) {
  const auto a = report_from_counts({1, 0, 0});   // F1 1
  const auto b = report_from_counts({0, 0, 99});  // F1 0
  const std::vector<MetricReport> runs{a, b};
  EXPECT_DOUBLE_EQ(aggregate_runs(runs).mean.f1, 0.5);
}

TEST(Report, JsonShape) {
  const auto counts = fixture_counts();
  const auto r = evaluate_run(counts, 50, 3);
  const auto j = to_json(r);
  EXPECT_EQ(j["n_boot"], 50);
  EXPECT_EQ(j["seed"], 3);
  EXPECT_EQ(j["ci"]["f1"].size(), 2u);
  EXPECT_DOUBLE_EQ(j["f1"].get<double>(), r.f1);
}
