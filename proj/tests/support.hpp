#pragma once

// Independent reference implementations used as test oracles, plus small
// fixtures shared by the unit and acceptance suites. Nothing here calls the
// library routine it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "ragner.hpp"

namespace oracle {

inline std::filesystem::path data(const std::string& rel) { return std::filesystem::path(RAGNER_TEST_DATA) / rel; }
inline std::filesystem::path fixture(const std::string& rel) { return std::filesystem::path(RAGNER_FIXTURES) / rel; }

using Triple = std::tuple<std::size_t, std::size_t, std::string>;

/// Scans every (start, end, type) triple and keeps the maximal B/I runs.
inline std::vector<Triple> spans_by_scan(const std::vector<std::string>& labels,
                                         const std::vector<std::string>& types) {
  const auto n = labels.size();
  std::vector<Triple> out;
  for (std::size_t start = 0; start < n; ++start) {
    for (std::size_t end = start + 1; end <= n; ++end) {
      for (const auto& t : types) {
        const std::string b = "B-" + t, i = "I-" + t;
        const bool opens = labels[start] == b ||
                           (labels[start] == i && (start == 0 || (labels[start - 1] != b && labels[start - 1] != i)));
        if (!opens) continue;
        bool inner = true;
        for (std::size_t k = start + 1; k < end; ++k) inner = inner && labels[k] == i;
        if (!inner) continue;
        const bool closed = end == n || labels[end] != i;
        if (closed) out.emplace_back(start, end, t);
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<Triple> as_triples(const std::vector<ragner::EntitySpan>& spans) {
  std::vector<Triple> out;
  for (const auto& s : spans) out.emplace_back(s.start, s.end, s.etype);
  return out;
}

inline std::vector<std::string> random_bio(std::mt19937& g, std::size_t n, const std::vector<std::string>& types) {
  std::vector<std::string> labels;
  std::uniform_int_distribution<int> pick(0, static_cast<int>(2 * types.size()));
  for (std::size_t i = 0; i < n; ++i) {
    const int r = pick(g);
    if (r == 0) {
      labels.emplace_back("O");
    } else {
      const auto& t = types[static_cast<std::size_t>(r - 1) / 2];
      labels.push_back(((r - 1) % 2 == 0 ? "B-" : "I-") + t);
    }
  }
  return labels;
}

// ---------------------------------------------------------------------------
// TF-IDF by the textbook formula over dense term vectors.

inline std::string lower(std::string s) {
  for (auto& c : s) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return s;
}

struct BruteTfidf {
  std::vector<std::string> vocab;
  std::map<std::string, double> idf;
  std::vector<std::vector<double>> docs;

  explicit BruteTfidf(const std::vector<std::vector<std::string>>& corpus) {
    std::set<std::string> v;
    for (const auto& d : corpus) {
      for (const auto& t : d) v.insert(lower(t));
    }
    vocab.assign(v.begin(), v.end());
    const double n = static_cast<double>(corpus.size());
    for (const auto& term : vocab) {
      double df = 0;
      for (const auto& d : corpus) {
        bool has = false;
        for (const auto& t : d) has = has || lower(t) == term;
        df += has ? 1 : 0;
      }
      idf[term] = std::log((1.0 + n) / (1.0 + df)) + 1.0;
    }
    for (const auto& d : corpus) docs.push_back(vec(d));
  }

  std::vector<double> vec(const std::vector<std::string>& tokens) const {
    std::vector<double> out(vocab.size(), 0.0);
    for (std::size_t k = 0; k < vocab.size(); ++k) {
      double tf = 0;
      for (const auto& t : tokens) tf += lower(t) == vocab[k] ? 1 : 0;
      out[k] = tf * idf.at(vocab[k]);
    }
    return out;
  }

  static double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ab += a[i] * b[i];
      aa += a[i] * a[i];
      bb += b[i] * b[i];
    }
    if (aa == 0 || bb == 0) return 0.0;
    return ab / (std::sqrt(aa) * std::sqrt(bb));
  }
};

/// Ids ordered by (score desc, id asc) from a full score table.
inline std::vector<std::string> order_by_score(std::vector<std::pair<std::string, double>> scored) {
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> ids;
  for (const auto& [id, s] : scored) ids.push_back(id);
  return ids;
}

// ---------------------------------------------------------------------------
// Late interaction and dot products by nested loops.

inline double maxsim_loops(const std::vector<std::vector<double>>& q, const std::vector<std::vector<double>>& d) {
  double total = 0.0;
  for (const auto& qi : q) {
    double best = -1e300;
    for (const auto& dj : d) {
      double s = 0.0;
      for (std::size_t k = 0; k < qi.size(); ++k) s += qi[k] * dj[k];
      best = std::max(best, s);
    }
    total += best;
  }
  return total;
}

inline std::vector<std::vector<double>> rows(const ragner::TokenMatrix& m) {
  std::vector<std::vector<double>> out;
  for (const auto& r : m.rows) out.push_back(r.values);
  return out;
}

// ---------------------------------------------------------------------------
// Span matching by exhaustive search over one-to-one pairings.

inline std::size_t best_pairing(const std::vector<ragner::EntitySpan>& gold, const std::vector<ragner::EntitySpan>& pred,
                                std::size_t gi, std::vector<bool>& used) {
  if (gi == gold.size()) return 0;
  std::size_t best = best_pairing(gold, pred, gi + 1, used);  // leave gold[gi] unmatched
  for (std::size_t p = 0; p < pred.size(); ++p) {
    if (used[p]) continue;
    const bool same = pred[p].start == gold[gi].start && pred[p].end == gold[gi].end && pred[p].etype == gold[gi].etype;
    if (!same) continue;
    used[p] = true;
    best = std::max(best, 1 + best_pairing(gold, pred, gi + 1, used));
    used[p] = false;
  }
  return best;
}

inline ragner::Counts exhaustive_counts(const std::vector<ragner::EntitySpan>& gold,
                                        const std::vector<ragner::EntitySpan>& pred) {
  std::vector<bool> used(pred.size(), false);
  const auto tp = best_pairing(gold, pred, 0, used);
  return {tp, pred.size() - tp, gold.size() - tp};
}

// ---------------------------------------------------------------------------
// Bootstrap replayed from the documented RNG stream.

struct ReplayCi {
  double p_lo, p_hi, r_lo, r_hi, f_lo, f_hi;
};

inline double interp(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(h);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

inline ReplayCi replay_bootstrap(const std::vector<ragner::Counts>& per_sentence, std::size_t n_boot,
                                 std::uint64_t seed, double level) {
  ragner::Rng rng(seed);
  std::vector<double> ps, rs, fs;
  const auto n = per_sentence.size();
  for (std::size_t b = 0; b < n_boot; ++b) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& c = per_sentence[ragner::uniform_below(rng, n)];
      tp += static_cast<double>(c.tp);
      fp += static_cast<double>(c.fp);
      fn += static_cast<double>(c.fn);
    }
    const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    ps.push_back(p);
    rs.push_back(r);
    fs.push_back(p + r > 0 ? 2 * p * r / (p + r) : 0.0);
  }
  const double a = (1 - level) / 2;
  return {interp(ps, a), interp(ps, 1 - a), interp(rs, a), interp(rs, 1 - a), interp(fs, a), interp(fs, 1 - a)};
}

// ---------------------------------------------------------------------------
// Corrupt mock scored without the wire: regenerate the corruptor's labels
// from each record's digest and score them directly.

inline double bypass_f1(const std::filesystem::path& jsonl, const ragner::Dataset& d,
                        const ragner::LabelAlphabet& alphabet, std::uint64_t mock_seed, std::uint64_t run_seed,
                        double rate) {
  std::ifstream in(jsonl);
  ragner::Counts total;
  for (std::string line; std::getline(in, line);) {
    const auto rec = nlohmann::json::parse(line);
    const auto* gold = d.find(rec.at("sentence_id").get<std::string>());
    const auto seed = ragner::mix_seed(ragner::mix_seed(mock_seed, run_seed),
                                       ragner::digest_to_u64(rec.at("prompt_digest").get<std::string>()));
    auto labels = ragner::corrupt_labels(gold->labels, alphabet, rate, seed);
    ragner::canonicalize_labels(labels);
    total += exhaustive_counts(ragner::extract_spans(*gold), ragner::extract_spans(labels));
  }
  const double tp = static_cast<double>(total.tp);
  const double p = total.tp + total.fp ? tp / static_cast<double>(total.tp + total.fp) : 0.0;
  const double r = total.tp + total.fn ? tp / static_cast<double>(total.tp + total.fn) : 0.0;
  return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// Fixtures

inline ragner::LabeledSentence make_sentence(const std::string& id, const std::vector<std::string>& tokens,
                                             const std::vector<std::string>& labels) {
  ragner::LabeledSentence s;
  s.id = id;
  for (std::size_t i = 0; i < tokens.size(); ++i) s.tokens.push_back({tokens[i], i});
  s.labels = labels;
  return s;
}

inline ragner::LabeledSentence codeine() {
  return make_sentence("codeine", {"I", "was", "a", "codeine", "addict."},
                       {"O", "O", "O", "B-Clinical_Impacts", "I-Clinical_Impacts"});
}

inline ragner::Dataset impacts() {
  return ragner::load_dataset(ragner::read_dataset_manifest(data("impacts/dataset.json")));
}

/// Mock-mode manifest over the impacts fixture writing into `out`.
inline nlohmann::json mock_manifest(const std::filesystem::path& out, const std::string& behavior = "gold_echo",
                                    double rate = 0.0) {
  return {{"version", 1},
          {"dataset", data("impacts/dataset.json").string()},
          {"prompt", {{"fixture", fixture("prompts/reddit_impacts.txt").string()}}},
          {"modes", {"static", "dynamic"}},
          {"engines", {"tfidf"}},
          {"shots", {5}},
          {"seeds", {1, 2, 3, 4}},
          {"llm", {{"preset", "gpt-4"}, {"max_concurrency", 4}, {"mock", {{"behavior", behavior}, {"rate", rate}, {"seed", 7}}}}},
          {"bootstrap", {{"n_boot", 200}, {"seed", 42}}},
          {"output_dir", out.string()}};
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ragner-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace oracle
