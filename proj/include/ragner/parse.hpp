#pragma once

// Turns free-form LLM output into one label per query token.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ragner/corpus.hpp"

namespace ragner {

/// Valid labels for one dataset: O, B-T, I-T and the bare class name T for
/// every entity type T.
class LabelAlphabet {
 public:
  LabelAlphabet() = default;

  static LabelAlphabet from_types(std::span<const std::string> types) {
    LabelAlphabet a;
    a.types_.assign(types.begin(), types.end());
    a.index();
    return a;
  }

  /// Builds from a label set such as {O, B-Disease, I-Disease}; entries
  /// without a B-/I- prefix are taken as bare class names.
  static LabelAlphabet from_labels(const std::set<std::string>& labels) {
    LabelAlphabet a;
    for (const auto& l : labels) {
      if (l == "O") continue;
      const std::string t = (is_begin(l) || is_inside(l)) ? std::string(label_type(l)) : l;
      if (std::find(a.types_.begin(), a.types_.end(), t) == a.types_.end()) a.types_.push_back(t);
    }
    std::sort(a.types_.begin(), a.types_.end());
    a.index();
    return a;
  }

  bool contains(std::string_view label) const { return all_.contains(std::string(label)); }
  bool is_plain(std::string_view label) const { return plain_.contains(std::string(label)); }
  const std::vector<std::string>& types() const noexcept { return types_; }

  /// O followed by B-T, I-T for each type.
  std::vector<std::string> bio_labels() const {
    std::vector<std::string> out{"O"};
    for (const auto& t : types_) {
      out.push_back("B-" + t);
      out.push_back("I-" + t);
    }
    return out;
  }

 private:
  void index() {
    all_ = {"O"};
    for (const auto& t : types_) {
      all_.insert("B-" + t);
      all_.insert("I-" + t);
      all_.insert(t);
      plain_.insert(t);
    }
  }

  std::vector<std::string> types_;
  std::set<std::string> all_;
  std::set<std::string> plain_;
};

enum class Repair { none, length_mismatch, token_mismatch, unparseable };

inline std::string_view to_string(Repair r) {
  switch (r) {
    case Repair::none: return "none";
    case Repair::length_mismatch: return "length_mismatch";
    case Repair::token_mismatch: return "token_mismatch";
    case Repair::unparseable: return "unparseable";
  }
  return "none";
}

struct Prediction {
  std::vector<std::string> labels;  // one per query token
  Repair repair = Repair::none;
  std::size_t response_items = 0;   // items found in the response
  std::size_t matched_items = 0;    // items assigned to a query token
  std::size_t dropped_items = 0;    // items left unassigned
  std::size_t filled_items = 0;     // query tokens defaulted to O
  bool used_fallback = false;       // items came from the loose pattern, not a bracketed list
};

struct LabeledItem {
  std::string token;  // may be empty when the item is a bare label
  std::string label;
};

/// Splits `token-LABEL` at the longest suffix that is a valid label. The
/// separating hyphen is optional, so `addict.I-Clinical_Impacts` splits into
/// `addict.` and `I-Clinical_Impacts`.
inline std::optional<LabeledItem> split_item(std::string_view item, const LabelAlphabet& alphabet) {
  for (std::size_t p = 0; p < item.size(); ++p) {
    const auto suffix = item.substr(p);
    if (!alphabet.contains(suffix)) continue;
    if (p == 0) return LabeledItem{{}, std::string(suffix)};
    const bool hyphen = item[p - 1] == '-';
    const auto token = item.substr(0, hyphen ? p - 1 : p);
    if (token.empty()) return LabeledItem{{}, std::string(suffix)};
    return LabeledItem{std::string(token), std::string(suffix)};
  }
  return std::nullopt;
}

namespace detail {

inline void skip_ws(std::string_view s, std::size_t& i) {
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\n' || s[i] == '\r')) ++i;
}

/// Quoted string starting at s[i] (a quote char); advances past the closing quote.
inline std::optional<std::string> read_quoted(std::string_view s, std::size_t& i) {
  const char q = s[i++];
  std::string out;
  while (i < s.size()) {
    const char c = s[i++];
    if (c == q) return out;
    if (c == '\\' && i < s.size()) {
      const char e = s[i++];
      switch (e) {
        case 'n': out.push_back('\n'); break;
        case 't': out.push_back('\t'); break;
        case 'r': out.push_back('\r'); break;
        case '\\':
        case '\'':
        case '"': out.push_back(e); break;
        default:
          out.push_back('\\');
          out.push_back(e);
      }
    } else {
      out.push_back(c);
    }
  }
  return std::nullopt;
}

/// Parses `['a', "b", ...]` starting at the '[' at s[start].
inline std::optional<std::vector<std::string>> read_list(std::string_view s, std::size_t start) {
  std::size_t i = start + 1;
  std::vector<std::string> items;
  skip_ws(s, i);
  if (i < s.size() && s[i] == ']') return items;
  while (i < s.size()) {
    skip_ws(s, i);
    if (i >= s.size() || (s[i] != '\'' && s[i] != '"')) return std::nullopt;
    auto item = read_quoted(s, i);
    if (!item) return std::nullopt;
    items.push_back(std::move(*item));
    skip_ws(s, i);
    if (i >= s.size()) return std::nullopt;
    if (s[i] == ']') return items;
    if (s[i] != ',') return std::nullopt;
    ++i;
    skip_ws(s, i);
    if (i < s.size() && s[i] == ']') return items;  // trailing comma
  }
  return std::nullopt;
}

inline std::optional<std::vector<std::string>> first_list(std::string_view raw) {
  for (std::size_t i = raw.find('['); i != std::string_view::npos; i = raw.find('[', i + 1)) {
    if (auto items = read_list(raw, i)) return items;
  }
  return std::nullopt;
}

/// Whitespace-separated chunks stripped of list punctuation that end in a
/// valid label.
inline std::vector<std::string> loose_items(std::string_view raw, const LabelAlphabet& alphabet) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < raw.size()) {
    while (i < raw.size() && std::isspace(static_cast<unsigned char>(raw[i]))) ++i;
    std::size_t j = i;
    while (j < raw.size() && !std::isspace(static_cast<unsigned char>(raw[j]))) ++j;
    std::string_view chunk = raw.substr(i, j - i);
    auto strip = [](char c) { return c == '\'' || c == '"' || c == ',' || c == '[' || c == ']'; };
    while (!chunk.empty() && strip(chunk.front())) chunk.remove_prefix(1);
    while (!chunk.empty() && strip(chunk.back())) chunk.remove_suffix(1);
    if (!chunk.empty()) {
      if (auto it = split_item(chunk, alphabet); it && !it->token.empty()) out.emplace_back(chunk);
    }
    i = j;
  }
  return out;
}

inline bool same_text_ci(std::string_view a, std::string_view b) { return ascii_lower(a) == ascii_lower(b); }

/// Maps bare class names to B-/I- by grouping equal adjacent class names.
inline void plain_runs_to_bio(std::vector<std::string>& labels, const LabelAlphabet& alphabet) {
  const auto original = labels;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!alphabet.is_plain(original[i])) continue;
    const bool continues = i > 0 && original[i - 1] == original[i];
    labels[i] = (continues ? "I-" : "B-") + original[i];
  }
}

}  // namespace detail

/// Never throws on arbitrary input; the worst case is an all-O prediction
/// marked unparseable.
inline Prediction parse_response(std::string_view raw, std::span<const Token> query_tokens,
                                 const LabelAlphabet& alphabet) noexcept {
  Prediction p;
  const std::size_t n = query_tokens.size();
  try {
    p.labels.assign(n, "O");
    auto list = detail::first_list(raw);
    if (!list) {
      auto loose = detail::loose_items(raw, alphabet);
      if (loose.empty()) {
        p.repair = Repair::unparseable;
        p.filled_items = n;
        return p;
      }
      p.used_fallback = true;
      list = std::move(loose);
    }
    p.response_items = list->size();

    std::vector<LabeledItem> items;
    for (const auto& raw_item : *list) {
      if (auto it = split_item(raw_item, alphabet)) {
        items.push_back(std::move(*it));
      } else {
        ++p.dropped_items;
      }
    }

    if (items.size() == n) {
      bool mismatch = false;
      for (std::size_t i = 0; i < n; ++i) {
        p.labels[i] = items[i].label;
        if (items[i].token != query_tokens[i].text && !detail::same_text_ci(items[i].token, query_tokens[i].text)) {
          mismatch = true;
        }
      }
      p.matched_items = n;
      p.repair = mismatch ? Repair::token_mismatch : (p.dropped_items ? Repair::length_mismatch : Repair::none);
    } else {
      // Greedy in-order alignment: exact text first, then case-insensitive.
      std::size_t next = 0;
      std::vector<bool> assigned(n, false);
      for (const auto& it : items) {
        std::optional<std::size_t> hit;
        for (std::size_t k = next; k < n && !hit; ++k) {
          if (query_tokens[k].text == it.token) hit = k;
        }
        for (std::size_t k = next; k < n && !hit; ++k) {
          if (!it.token.empty() && detail::same_text_ci(query_tokens[k].text, it.token)) hit = k;
        }
        if (!hit) {
          ++p.dropped_items;
          continue;
        }
        p.labels[*hit] = it.label;
        assigned[*hit] = true;
        ++p.matched_items;
        next = *hit + 1;
      }
      p.filled_items = static_cast<std::size_t>(std::count(assigned.begin(), assigned.end(), false));
      p.repair = Repair::length_mismatch;
    }
    detail::plain_runs_to_bio(p.labels, alphabet);
    return p;
  } catch (...) {
    Prediction fail;
    fail.labels.assign(n, "O");
    fail.repair = Repair::unparseable;
    fail.filled_items = n;
    return fail;
  }
}

/// Spans of a prediction after the load-time canonicalization rule.
inline std::vector<EntitySpan> to_spans(const Prediction& p) {
  auto labels = p.labels;
  canonicalize_labels(labels);
  return extract_spans(labels);
}

}  // namespace ragner
