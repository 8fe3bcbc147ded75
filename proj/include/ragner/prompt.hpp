#pragma once

// Static and retrieval-augmented prompt assembly.
//
// The system message carries the base component (task description, entity
// definitions, format specification). The user message carries the enabled
// optional components, the example block and finally the query input, in
// the configured order.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "ragner/corpus.hpp"
#include "ragner/digest.hpp"
#include "ragner/error.hpp"
#include "ragner/retrieval.hpp"
#include "ragner/rng.hpp"

namespace ragner {

enum class ExampleFormat { sentence_in_tokens_out, tokens_in_tokens_out };
enum class ExampleMode { static_random, dynamic_retrieved };
enum class Sampling { per_label, total };

enum class Component { base, dataset_description, high_frequency, umls_knowledge, error_feedback, examples, query };

inline std::string_view to_string(ExampleFormat f) {
  return f == ExampleFormat::sentence_in_tokens_out ? "sentence_in_tokens_out" : "tokens_in_tokens_out";
}
inline std::string_view to_string(ExampleMode m) {
  return m == ExampleMode::static_random ? "static_random" : "dynamic_retrieved";
}
inline std::string_view to_string(Sampling s) { return s == Sampling::per_label ? "per_label" : "total"; }

inline std::string_view to_string(Component c) {
  switch (c) {
    case Component::base: return "base";
    case Component::dataset_description: return "dataset_description";
    case Component::high_frequency: return "high_frequency";
    case Component::umls_knowledge: return "umls_knowledge";
    case Component::error_feedback: return "error_feedback";
    case Component::examples: return "examples";
    case Component::query: return "query";
  }
  return "base";
}

inline ExampleFormat example_format_from_string(std::string_view s) {
  if (s == "sentence_in_tokens_out") return ExampleFormat::sentence_in_tokens_out;
  if (s == "tokens_in_tokens_out") return ExampleFormat::tokens_in_tokens_out;
  throw ConfigError("unknown example format '" + std::string(s) + "'");
}

inline Sampling sampling_from_string(std::string_view s) {
  if (s == "per_label") return Sampling::per_label;
  if (s == "total") return Sampling::total;
  throw ConfigError("unknown sampling '" + std::string(s) + "'");
}

inline Component component_from_string(std::string_view s) {
  for (auto c : {Component::base, Component::dataset_description, Component::high_frequency, Component::umls_knowledge,
                 Component::error_feedback, Component::examples, Component::query}) {
    if (to_string(c) == s) return c;
  }
  throw ConfigError("unknown prompt component '" + std::string(s) + "'");
}

inline std::vector<Component> default_component_order() {
  return {Component::base,           Component::dataset_description, Component::high_frequency,
          Component::umls_knowledge, Component::error_feedback,      Component::examples,
          Component::query};
}

struct ExampleBlockConfig {
  ExampleMode mode = ExampleMode::static_random;
  std::size_t k = 0;
  ExampleFormat format = ExampleFormat::tokens_in_tokens_out;
  Sampling sampling = Sampling::per_label;
  std::optional<std::uint64_t> seed;
  std::optional<EngineKind> engine;

  void validate() const {
    if (mode == ExampleMode::static_random && !seed) throw ConfigError("static_random examples require a seed");
    if (mode == ExampleMode::dynamic_retrieved && !engine) {
      throw ConfigError("dynamic_retrieved examples require an engine kind");
    }
  }
};

struct EntityDefinition {
  std::string etype;
  std::string text;
};

struct BaseComponent {
  std::string task_description;
  std::vector<EntityDefinition> entity_definitions;
  std::string format_spec;
};

struct TextComponent {
  bool enabled = false;
  std::string text;
};

struct HighFrequencyComponent {
  bool enabled = false;
  std::size_t top_k = 6;
  FrequencyLexicon lexicon;
  /// Replaces the lexicon rendering when non-empty.
  std::string text;
};

struct PromptComponents {
  BaseComponent base;
  TextComponent dataset_description;
  HighFrequencyComponent high_frequency;
  TextComponent umls_knowledge;
  TextComponent error_feedback;
  ExampleBlockConfig examples;
  std::vector<Component> order = default_component_order();
};

struct PromptBundle {
  std::string system_message;
  std::string user_message;
  std::vector<std::string> included_example_ids;
  std::map<std::string, bool> component_provenance;
  std::size_t query_token_count = 0;

  bool operator==(const PromptBundle&) const = default;
};

/// Content hash identifying a prompt (system and user message).
inline std::string prompt_digest(std::string_view system_message, std::string_view user_message) {
  std::string buf;
  buf.reserve(system_message.size() + user_message.size() + 1);
  buf.append(system_message);
  buf.push_back('\x1e');
  buf.append(user_message);
  return sha256_hex(buf);
}

inline std::string prompt_digest(const PromptBundle& b) { return prompt_digest(b.system_message, b.user_message); }

// ---------------------------------------------------------------------------
// Example formatting

/// Python-repr style quoting: single quotes unless the text contains a single
/// quote and no double quote; backslashes and the active quote are escaped.
inline std::string quote_item(std::string_view s) {
  const bool has_single = s.find('\'') != std::string_view::npos;
  const bool has_double = s.find('"') != std::string_view::npos;
  const char q = (has_single && !has_double) ? '"' : '\'';
  std::string out(1, q);
  for (char c : s) {
    if (c == '\\' || c == q) {
      out.push_back('\\');
      out.push_back(c);
    } else if (c == '\n') {
      out += "\\n";
    } else if (c == '\t') {
      out += "\\t";
    } else if (c == '\r') {
      out += "\\r";
    } else {
      out.push_back(c);
    }
  }
  out.push_back(q);
  return out;
}

inline std::string render_list(std::span<const std::string> items) {
  std::string out = "[";
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += quote_item(items[i]);
  }
  out += "]";
  return out;
}

inline std::vector<std::string> token_texts(std::span<const Token> tokens) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.text);
  return out;
}

inline std::string render_input(std::span<const Token> tokens, ExampleFormat format) {
  const auto texts = token_texts(tokens);
  if (format == ExampleFormat::tokens_in_tokens_out) return render_list(texts);
  std::string sentence;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (i) sentence.push_back(' ');
    sentence += texts[i];
  }
  return render_list(std::vector<std::string>{sentence});
}

/// `['tok-LABEL', ...]`
inline std::string render_labeled_output(std::span<const Token> tokens, std::span<const std::string> labels) {
  std::vector<std::string> items;
  items.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) items.push_back(tokens[i].text + "-" + labels[i]);
  return render_list(items);
}

inline std::string format_example(const LabeledSentence& s, ExampleFormat format) {
  return "Input: " + render_input(s.tokens, format) + "\nOutput: " + render_labeled_output(s.tokens, s.labels);
}

inline std::string render_lexicon(const FrequencyLexicon& lex) {
  std::string out;
  for (const auto& t : lex.types) {
    if (t.entries.empty()) continue;
    if (!out.empty()) out.push_back(' ');
    out += "In this dataset, high-frequency '" + t.etype + "' include ";
    for (std::size_t i = 0; i < t.entries.size(); ++i) {
      if (i) out += (i + 1 == t.entries.size()) ? ", and " : ", ";
      out += "'" + t.entries[i].word + "'";
    }
    out += ".";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Example selection

/// Seeded random few-shot examples from the train split.
///
/// per_label: for each entity type in turn, k distinct sentences containing
/// that type (all of them when fewer exist), deduplicated by id in draw
/// order. total: k distinct sentences drawn uniformly.
inline std::vector<LabeledSentence> sample_static_examples(const Dataset& d, const ExampleBlockConfig& cfg) {
  if (cfg.mode != ExampleMode::static_random) throw SamplingError("sample_static_examples needs static_random mode");
  cfg.validate();
  if (cfg.k == 0) return {};
  Rng rng(*cfg.seed);

  auto draw = [&](std::vector<std::size_t> pool, std::size_t k) {
    const std::size_t take = std::min(k, pool.size());
    for (std::size_t i = 0; i < take; ++i) {
      const auto j = i + static_cast<std::size_t>(uniform_below(rng, pool.size() - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(take);
    return pool;
  };

  std::vector<std::size_t> picked;
  if (cfg.sampling == Sampling::total) {
    std::vector<std::size_t> all(d.train.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    picked = draw(std::move(all), cfg.k);
  } else {
    std::unordered_set<std::size_t> seen;
    for (const auto& etype : d.entity_types) {
      std::vector<std::size_t> pool;
      for (std::size_t i = 0; i < d.train.size(); ++i) {
        const auto spans = extract_spans(d.train[i]);
        if (std::any_of(spans.begin(), spans.end(), [&](const EntitySpan& s) { return s.etype == etype; })) {
          pool.push_back(i);
        }
      }
      if (pool.empty()) throw SamplingError("entity type '" + etype + "' has no training sentence to sample");
      for (auto i : draw(std::move(pool), cfg.k)) {
        if (seen.insert(i).second) picked.push_back(i);
      }
    }
  }
  std::vector<LabeledSentence> out;
  out.reserve(picked.size());
  for (auto i : picked) out.push_back(d.train[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Assembly

namespace detail {

inline void validate_order(const std::vector<Component>& order) {
  auto want = default_component_order();
  auto got = order;
  std::sort(want.begin(), want.end());
  std::sort(got.begin(), got.end());
  if (got != want) throw ConfigError("component order must list every component exactly once");
  if (order.back() != Component::query) throw ConfigError("component order must end with the query");
}

}  // namespace detail

inline std::string render_system_message(const BaseComponent& base) {
  std::string out = base.task_description;
  if (!base.entity_definitions.empty()) {
    out += "\n\n";
    for (std::size_t i = 0; i < base.entity_definitions.size(); ++i) {
      if (i) out.push_back('\n');
      out += base.entity_definitions[i].text;
    }
  }
  if (!base.format_spec.empty()) out += "\n\n" + base.format_spec;
  return out;
}

/// Deterministic assembly; identical inputs give byte-identical bundles.
inline PromptBundle build_prompt(const PromptComponents& c, std::span<const LabeledSentence> examples,
                                 std::span<const Token> query_tokens) {
  if (query_tokens.empty()) throw Error("build_prompt: empty query");
  detail::validate_order(c.order);

  PromptBundle b;
  b.system_message = render_system_message(c.base);
  b.query_token_count = query_tokens.size();

  std::vector<std::string> blocks;
  for (const auto comp : c.order) {
    switch (comp) {
      case Component::base:
        b.component_provenance["base"] = true;
        break;
      case Component::dataset_description:
      case Component::umls_knowledge:
      case Component::error_feedback: {
        const auto& tc = comp == Component::dataset_description ? c.dataset_description
                         : comp == Component::umls_knowledge    ? c.umls_knowledge
                                                                : c.error_feedback;
        b.component_provenance[std::string(to_string(comp))] = tc.enabled;
        if (tc.enabled) blocks.push_back(tc.text);
        break;
      }
      case Component::high_frequency:
        b.component_provenance["high_frequency"] = c.high_frequency.enabled;
        if (c.high_frequency.enabled) {
          blocks.push_back(c.high_frequency.text.empty() ? render_lexicon(c.high_frequency.lexicon)
                                                         : c.high_frequency.text);
        }
        break;
      case Component::examples: {
        b.component_provenance["examples"] = !examples.empty();
        if (examples.empty()) break;
        std::string block = "Here are some annotated examples:";
        for (const auto& ex : examples) {
          block += "\n\n" + format_example(ex, c.examples.format);
          b.included_example_ids.push_back(ex.id);
        }
        blocks.push_back(std::move(block));
        break;
      }
      case Component::query:
        b.component_provenance["query"] = true;
        blocks.push_back("Label every token of the following input. Reply with the output list only.\nInput: " +
                         render_input(query_tokens, c.examples.format));
        break;
    }
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (i) b.user_message += "\n\n";
    b.user_message += blocks[i];
  }
  return b;
}

// ---------------------------------------------------------------------------
// Fixture files

/// Prompt texts for one dataset, read from a sectioned text file:
///
///     [task_description]
///     ...
///     [entity_definition Disease]
///     ...
///
/// Recognised sections: task_description, entity_definition <type>,
/// format_spec, dataset_description, high_frequency, umls_knowledge,
/// error_feedback. Lines starting with '#' before the first section are
/// comments.
struct PromptFixture {
  BaseComponent base;
  std::optional<std::string> dataset_description;
  std::optional<std::string> high_frequency;
  std::optional<std::string> umls_knowledge;
  std::optional<std::string> error_feedback;
};

inline PromptFixture parse_prompt_fixture(std::istream& in, const std::string& source = "<fixture>") {
  PromptFixture fx;
  std::string section;
  std::string etype;
  std::vector<std::string> lines;
  bool have_task = false;

  auto trim_block = [](std::vector<std::string>& ls) {
    while (!ls.empty() && detail::is_blank(ls.back())) ls.pop_back();
    std::size_t first = 0;
    while (first < ls.size() && detail::is_blank(ls[first])) ++first;
    std::string out;
    for (std::size_t i = first; i < ls.size(); ++i) {
      if (i > first) out.push_back('\n');
      out += ls[i];
    }
    return out;
  };

  auto flush = [&](std::size_t lineno) {
    if (section.empty()) return;
    std::string text = trim_block(lines);
    if (section == "task_description") {
      fx.base.task_description = std::move(text);
      have_task = true;
    } else if (section == "entity_definition") {
      fx.base.entity_definitions.push_back({etype, std::move(text)});
    } else if (section == "format_spec") {
      fx.base.format_spec = std::move(text);
    } else if (section == "dataset_description") {
      fx.dataset_description = std::move(text);
    } else if (section == "high_frequency") {
      fx.high_frequency = std::move(text);
    } else if (section == "umls_knowledge") {
      fx.umls_knowledge = std::move(text);
    } else if (section == "error_feedback") {
      fx.error_feedback = std::move(text);
    } else {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": unknown section [" + section + "]");
    }
    lines.clear();
  };

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.size() >= 2 && line.front() == '[' && line.back() == ']') {
      const std::string header = line.substr(1, line.size() - 2);
      const bool known = header.starts_with("entity_definition") || header == "task_description" ||
                         header == "format_spec" || header == "dataset_description" || header == "high_frequency" ||
                         header == "umls_knowledge" || header == "error_feedback";
      if (known) {
        flush(lineno);
        const auto sp = header.find(' ');
        section = header.substr(0, sp);
        etype = sp == std::string::npos ? std::string{} : header.substr(sp + 1);
        if (section == "entity_definition" && etype.empty()) {
          throw ConfigError(source + ":" + std::to_string(lineno) + ": entity_definition needs a type name");
        }
        continue;
      }
      const bool looks_like_header = std::all_of(header.begin(), header.end(), [](char ch) {
        return (ch >= 'a' && ch <= 'z') || ch == '_';
      });
      if (looks_like_header) {
        throw ConfigError(source + ":" + std::to_string(lineno) + ": unknown section [" + header + "]");
      }
    }
    if (section.empty()) {
      if (detail::is_blank(line) || line.front() == '#') continue;
      throw ConfigError(source + ":" + std::to_string(lineno) + ": text before the first section");
    }
    lines.push_back(line);
  }
  flush(lineno);
  if (!have_task) throw ConfigError(source + ": missing [task_description]");
  return fx;
}

inline PromptFixture load_prompt_fixture(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open prompt fixture " + path.string());
  return parse_prompt_fixture(in, path.string());
}

}  // namespace ragner
