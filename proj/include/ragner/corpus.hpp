#pragma once

// Pre-tokenized BIO corpora: loading, span decoding, statistics and
// per-type frequency lexicons.

#include <algorithm>
#include <cctype>
#include <compare>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ragner/error.hpp"

namespace ragner {

enum class Split { train, test };
enum class LabelScheme { bio, plain };

inline std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }
inline std::string_view to_string(LabelScheme s) { return s == LabelScheme::bio ? "bio" : "plain"; }

inline LabelScheme label_scheme_from_string(std::string_view s) {
  if (s == "bio") return LabelScheme::bio;
  if (s == "plain") return LabelScheme::plain;
  throw ConfigError("unknown label scheme '" + std::string(s) + "' (expected bio or plain)");
}

struct Token {
  std::string text;
  std::size_t index = 0;

  bool operator==(const Token&) const = default;
};

struct LabeledSentence {
  std::string id;
  std::vector<Token> tokens;
  std::vector<std::string> labels;
  Split split = Split::train;

  std::size_t size() const noexcept { return tokens.size(); }
  std::vector<std::string> token_texts() const {
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(t.text);
    return out;
  }
  bool operator==(const LabeledSentence&) const = default;
};

/// Half-open token range [start, end) carrying one entity type.
struct EntitySpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string etype;

  auto operator<=>(const EntitySpan&) const = default;
};

struct Dataset {
  std::string name;
  std::vector<LabeledSentence> train;
  std::vector<LabeledSentence> test;
  std::vector<std::string> entity_types;
  /// Stray I- labels rewritten to B- while loading.
  std::size_t repaired_labels = 0;

  const LabeledSentence* find(std::string_view id) const {
    for (const auto* split : {&train, &test}) {
      for (const auto& s : *split) {
        if (s.id == id) return &s;
      }
    }
    return nullptr;
  }
};

struct LexiconEntry {
  std::string word;
  std::size_t count = 0;

  bool operator==(const LexiconEntry&) const = default;
};

struct TypeLexicon {
  std::string etype;
  std::vector<LexiconEntry> entries;

  bool operator==(const TypeLexicon&) const = default;
};

/// One ranked list per entity type, in the dataset's entity-type order.
struct FrequencyLexicon {
  std::vector<TypeLexicon> types;

  const TypeLexicon* find(std::string_view etype) const {
    for (const auto& t : types) {
      if (t.etype == etype) return &t;
    }
    return nullptr;
  }
};

struct DatasetStats {
  std::size_t train_sentences = 0;
  std::size_t test_sentences = 0;
  std::size_t train_tokens = 0;
  std::size_t test_tokens = 0;
  std::size_t entities = 0;
  std::size_t entity_types = 0;
  std::map<std::string, std::size_t> entities_per_type;
};

// ---------------------------------------------------------------------------
// Labels

inline bool is_begin(std::string_view label) { return label.size() > 2 && label.starts_with("B-"); }
inline bool is_inside(std::string_view label) { return label.size() > 2 && label.starts_with("I-"); }
inline std::string_view label_type(std::string_view label) {
  return (is_begin(label) || is_inside(label)) ? label.substr(2) : std::string_view{};
}

/// Rewrites every I-T that does not continue an open T span into B-T.
/// Returns the number of rewritten labels.
inline std::size_t canonicalize_labels(std::vector<std::string>& labels) {
  std::size_t repairs = 0;
  std::string_view open;
  for (auto& label : labels) {
    if (is_begin(label)) {
      open = label_type(label);
    } else if (is_inside(label)) {
      const auto t = label_type(label);
      if (open != t) {
        label = "B-" + std::string(t);
        ++repairs;
      }
      open = label_type(label);
    } else {
      open = {};
    }
  }
  return repairs;
}

/// Converts bare class labels to BIO: each run of equal adjacent class names
/// opens with B- and continues with I-.
inline std::vector<std::string> plain_to_bio(std::span<const std::string> plain) {
  std::vector<std::string> out;
  out.reserve(plain.size());
  for (std::size_t i = 0; i < plain.size(); ++i) {
    if (plain[i] == "O") {
      out.emplace_back("O");
    } else if (i > 0 && plain[i - 1] == plain[i]) {
      out.push_back("I-" + plain[i]);
    } else {
      out.push_back("B-" + plain[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spans

/// Maximal spans: B-T opens, following I-T extend, anything else closes.
/// An I-T with no open T span opens one (same rule as canonicalization).
inline std::vector<EntitySpan> extract_spans(std::span<const std::string> labels) {
  std::vector<EntitySpan> spans;
  std::optional<EntitySpan> open;
  auto close = [&] {
    if (open) spans.push_back(std::move(*open));
    open.reset();
  };
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::string_view label = labels[i];
    if (is_begin(label)) {
      close();
      open = EntitySpan{i, i + 1, std::string(label_type(label))};
    } else if (is_inside(label)) {
      const auto t = label_type(label);
      if (open && open->etype == t) {
        open->end = i + 1;
      } else {
        close();
        open = EntitySpan{i, i + 1, std::string(t)};
      }
    } else {
      close();
    }
  }
  close();
  return spans;
}

inline std::vector<EntitySpan> extract_spans(const LabeledSentence& s) { return extract_spans(s.labels); }

// ---------------------------------------------------------------------------
// Loading

struct ConllOptions {
  LabelScheme scheme = LabelScheme::bio;
  Split split = Split::train;
  /// Sentence ids are `<id_prefix>-NNNNNN`; defaults to the split name.
  std::string id_prefix;
  /// When set, entity types outside this alphabet are label errors.
  std::optional<std::set<std::string>> alphabet;
};

struct ConllResult {
  std::vector<LabeledSentence> sentences;
  std::size_t repaired_labels = 0;
};

namespace detail {

inline std::string sentence_id(std::string_view prefix, std::size_t ordinal) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", ordinal);
  return std::string(prefix) + "-" + buf;
}

inline bool is_blank(std::string_view line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

inline bool has_whitespace(std::string_view s) {
  return std::any_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace detail

/// Reads two-column `token<TAB>label` lines; blank lines separate sentences.
/// `source` names the input in error messages.
inline ConllResult read_conll(std::istream& in, const ConllOptions& opts, const std::string& source = "<stream>") {
  ConllResult result;
  const std::string prefix = opts.id_prefix.empty() ? std::string(to_string(opts.split)) : opts.id_prefix;

  std::vector<Token> tokens;
  std::vector<std::string> raw_labels;

  auto flush = [&] {
    if (tokens.empty()) return;
    std::vector<std::string> labels;
    if (opts.scheme == LabelScheme::plain) {
      labels = plain_to_bio(raw_labels);
    } else {
      labels = raw_labels;
      result.repaired_labels += canonicalize_labels(labels);
    }
    LabeledSentence s;
    s.id = detail::sentence_id(prefix, result.sentences.size() + 1);
    s.tokens = std::move(tokens);
    s.labels = std::move(labels);
    s.split = opts.split;
    result.sentences.push_back(std::move(s));
    tokens.clear();
    raw_labels.clear();
  };

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::is_blank(line)) {
      flush();
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw ParseError(source, lineno, "expected exactly two tab-separated columns");
    }
    std::string text = line.substr(0, tab);
    std::string label = line.substr(tab + 1);
    if (text.empty() || detail::has_whitespace(text)) {
      throw ParseError(source, lineno, "token must be non-empty and contain no whitespace");
    }
    if (label.empty() || detail::has_whitespace(label)) {
      throw ParseError(source, lineno, "label must be non-empty and contain no whitespace");
    }
    std::string_view etype;
    if (label != "O") {
      if (opts.scheme == LabelScheme::bio) {
        if (!is_begin(label) && !is_inside(label)) {
          throw LabelError(source, lineno, "label '" + label + "' is not O, B-<type> or I-<type>");
        }
        etype = label_type(label);
      } else {
        etype = label;
      }
      if (opts.alphabet && !opts.alphabet->contains(std::string(etype))) {
        throw LabelError(source, lineno, "entity type '" + std::string(etype) + "' is not in the alphabet");
      }
    }
    tokens.push_back(Token{std::move(text), tokens.size()});
    raw_labels.push_back(std::move(label));
  }
  flush();
  return result;
}

namespace detail {

inline void collect_types(const std::vector<LabeledSentence>& sentences, std::vector<std::string>& order,
                          std::unordered_set<std::string>& seen) {
  for (const auto& s : sentences) {
    for (const auto& label : s.labels) {
      const auto t = label_type(label);
      if (!t.empty() && seen.insert(std::string(t)).second) order.emplace_back(t);
    }
  }
}

}  // namespace detail

/// Recomputes `entity_types` as the union over both splits in first-seen
/// order, or in `preferred` order when given.
inline void refresh_entity_types(Dataset& d, const std::vector<std::string>& preferred = {}) {
  std::vector<std::string> order;
  std::unordered_set<std::string> seen;
  detail::collect_types(d.train, order, seen);
  detail::collect_types(d.test, order, seen);
  if (!preferred.empty()) {
    std::vector<std::string> sorted;
    for (const auto& t : preferred) {
      if (seen.contains(t)) sorted.push_back(t);
    }
    for (const auto& t : order) {
      if (std::find(sorted.begin(), sorted.end(), t) == sorted.end()) sorted.push_back(t);
    }
    order = std::move(sorted);
  }
  d.entity_types = std::move(order);
}

/// Loads one two-column file into the requested split of a new Dataset.
inline Dataset load_conll(const std::filesystem::path& path, LabelScheme scheme, Split split = Split::train) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  ConllOptions opts;
  opts.scheme = scheme;
  opts.split = split;
  auto result = read_conll(in, opts, path.string());
  if (result.sentences.empty()) throw EmptyDatasetError(path.string() + ": no sentences");
  Dataset d;
  d.name = path.stem().string();
  (split == Split::train ? d.train : d.test) = std::move(result.sentences);
  d.repaired_labels = result.repaired_labels;
  refresh_entity_types(d);
  return d;
}

struct DatasetSource {
  std::string name;
  std::filesystem::path train;
  std::filesystem::path test;
  LabelScheme scheme = LabelScheme::bio;
  std::vector<std::string> entity_types;  // empty = accept any type
};

/// Reads a sidecar manifest:
/// `{"name", "scheme", "train", "test", "entity_types"}`; paths are relative
/// to the manifest's directory.
inline DatasetSource read_dataset_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("dataset manifest " + path.string() + ": " + e.what());
  }
  DatasetSource src;
  const auto base = path.parent_path();
  try {
    src.name = j.value("name", path.stem().string());
    src.scheme = label_scheme_from_string(j.value("scheme", std::string("bio")));
    src.train = base / j.at("train").get<std::string>();
    src.test = base / j.at("test").get<std::string>();
    src.entity_types = j.value("entity_types", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("dataset manifest " + path.string() + ": " + e.what());
  }
  return src;
}

inline Dataset load_dataset(const DatasetSource& src) {
  Dataset d;
  d.name = src.name;
  for (const auto split : {Split::train, Split::test}) {
    const auto& path = split == Split::train ? src.train : src.test;
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    ConllOptions opts;
    opts.scheme = src.scheme;
    opts.split = split;
    if (!src.entity_types.empty()) {
      opts.alphabet = std::set<std::string>(src.entity_types.begin(), src.entity_types.end());
    }
    auto result = read_conll(in, opts, path.string());
    d.repaired_labels += result.repaired_labels;
    (split == Split::train ? d.train : d.test) = std::move(result.sentences);
  }
  if (d.train.empty() && d.test.empty()) throw EmptyDatasetError(src.name + ": no sentences");
  refresh_entity_types(d, src.entity_types);
  return d;
}

/// Inverse of read_conll for BIO labels.
inline void write_conll(std::ostream& out, std::span<const LabeledSentence> sentences) {
  for (const auto& s : sentences) {
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      out << s.tokens[i].text << '\t' << s.labels[i] << '\n';
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Statistics

inline DatasetStats dataset_stats(const Dataset& d) {
  DatasetStats st;
  st.train_sentences = d.train.size();
  st.test_sentences = d.test.size();
  for (const auto* split : {&d.train, &d.test}) {
    for (const auto& s : *split) {
      (split == &d.train ? st.train_tokens : st.test_tokens) += s.tokens.size();
      for (const auto& span : extract_spans(s)) {
        ++st.entities;
        ++st.entities_per_type[span.etype];
      }
    }
  }
  st.entity_types = st.entities_per_type.size();
  return st;
}

inline nlohmann::json to_json(const DatasetStats& st) {
  return {{"train_sentences", st.train_sentences}, {"test_sentences", st.test_sentences},
          {"train_tokens", st.train_tokens},       {"test_tokens", st.test_tokens},
          {"entities", st.entities},               {"entity_types", st.entity_types},
          {"entities_per_type", st.entities_per_type}};
}

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

/// Top-k lowercased words inside spans of each type, over the train split.
/// Ties rank lexicographically.
inline FrequencyLexicon frequency_lexicon(const Dataset& d, std::size_t top_k = 6) {
  if (top_k == 0) throw Error("frequency_lexicon: top_k must be >= 1");
  std::map<std::string, std::unordered_map<std::string, std::size_t>> counts;
  for (const auto& s : d.train) {
    for (const auto& span : extract_spans(s)) {
      auto& per_word = counts[span.etype];
      for (std::size_t i = span.start; i < span.end; ++i) ++per_word[ascii_lower(s.tokens[i].text)];
    }
  }
  FrequencyLexicon lex;
  for (const auto& etype : d.entity_types) {
    TypeLexicon tl{etype, {}};
    if (auto it = counts.find(etype); it != counts.end()) {
      for (const auto& [word, n] : it->second) tl.entries.push_back({word, n});
      std::sort(tl.entries.begin(), tl.entries.end(), [](const LexiconEntry& a, const LexiconEntry& b) {
        return a.count != b.count ? a.count > b.count : a.word < b.word;
      });
      if (tl.entries.size() > top_k) tl.entries.resize(top_k);
    }
    lex.types.push_back(std::move(tl));
  }
  return lex;
}

inline nlohmann::json to_json(const FrequencyLexicon& lex) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& t : lex.types) {
    auto arr = nlohmann::json::array();
    for (const auto& e : t.entries) arr.push_back({{"word", e.word}, {"count", e.count}});
    j[t.etype] = std::move(arr);
  }
  return j;
}

}  // namespace ragner
