#pragma once

// Experiment manifest: a versioned JSON document describing one grid of
// (mode x engine x shots) cells over one dataset.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ragner/corpus.hpp"
#include "ragner/error.hpp"
#include "ragner/llm.hpp"
#include "ragner/mock_llm.hpp"
#include "ragner/prompt.hpp"
#include "ragner/retrieval.hpp"

namespace ragner {

inline constexpr int kManifestVersion = 1;

inline std::string_view mode_name(ExampleMode m) { return m == ExampleMode::static_random ? "static" : "dynamic"; }

inline ExampleMode mode_from_string(std::string_view s) {
  if (s == "static" || s == "static_random") return ExampleMode::static_random;
  if (s == "dynamic" || s == "dynamic_retrieved" || s == "rag") return ExampleMode::dynamic_retrieved;
  throw ConfigError("unknown mode '" + std::string(s) + "' (static, dynamic)");
}

struct MockSpec {
  MockBehavior behavior;
  std::vector<std::string> fail_sentences;  // test ids whose requests always fail
};

struct LlmSpec {
  GenerationParams params = GenerationParams::gpt4();
  std::string preset = "gpt-4";
  std::string endpoint;
  std::string api_key_env = "OPENAI_API_KEY";
  std::string api_key_header = "Authorization";
  std::size_t max_concurrency = 4;
  RetryPolicy retry;
  std::optional<MockSpec> mock;
};

struct EmbedderSpec {
  std::string kind = "fallback";  // fallback | http
  std::string url;
  std::string model;
  std::string token_env;
};

struct BootstrapSpec {
  std::size_t n_boot = 1000;
  double level = 0.95;
  std::uint64_t seed = 42;
};

struct PromptSpec {
  std::optional<std::filesystem::path> fixture;
  bool dataset_description = false;
  bool high_frequency = false;
  bool umls_knowledge = false;
  bool error_feedback = false;
  std::size_t high_frequency_top_k = 6;
  bool high_frequency_from_fixture = false;  // use the fixture's text instead of the computed lexicon
  std::vector<Component> order = default_component_order();
  ExampleFormat format = ExampleFormat::tokens_in_tokens_out;
  Sampling sampling = Sampling::per_label;
};

struct Manifest {
  int version = kManifestVersion;
  DatasetSource dataset;
  PromptSpec prompt;
  std::vector<ExampleMode> modes{ExampleMode::static_random};
  std::vector<EngineKind> engines{EngineKind::tfidf};
  std::vector<std::size_t> shots{5};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4};
  LlmSpec llm;
  EmbedderSpec embedder;
  std::filesystem::path output_dir = "out";
  bool use_cache = true;
  std::optional<std::filesystem::path> cache_dir;  // default: <output_dir>/cache
  BootstrapSpec bootstrap;

  std::size_t runs() const noexcept { return seeds.size(); }
  std::filesystem::path effective_cache_dir() const { return cache_dir.value_or(output_dir / "cache"); }
};

namespace detail {

template <class T>
std::vector<T> scalar_or_list(const nlohmann::json& j) {
  if (j.is_array()) return j.get<std::vector<T>>();
  return {j.get<T>()};
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

inline const nlohmann::json& obj_or_empty(const nlohmann::json& j, const char* key) {
  static const nlohmann::json empty = nlohmann::json::object();
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return empty;
  if (!it->is_object()) throw ConfigError(std::string("manifest: '") + key + "' must be an object");
  return *it;
}

inline void check_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                             const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) {
      throw ConfigError("manifest: unknown key '" + where + k + "'");
    }
  }
}

}  // namespace detail

/// Parses and validates a manifest. Relative paths resolve against `base_dir`.
inline Manifest parse_manifest(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("manifest must be a JSON object");
  detail::check_known_keys(j,
                           {"version", "dataset", "prompt", "examples", "mode", "modes", "engine", "engines", "shots",
                            "runs", "seeds", "llm", "embedder", "output_dir", "cache", "bootstrap", "description"},
                           "");
  Manifest m;
  try {
    m.version = j.value("version", kManifestVersion);
    if (m.version != kManifestVersion) throw ConfigError("unsupported manifest version " + std::to_string(m.version));

    const auto& ds = j.at("dataset");
    if (ds.is_string()) {
      m.dataset = read_dataset_manifest(detail::resolve(base_dir, ds.get<std::string>()));
    } else {
      detail::check_known_keys(ds, {"name", "scheme", "train", "test", "entity_types"}, "dataset.");
      m.dataset.name = ds.value("name", std::string("dataset"));
      m.dataset.scheme = label_scheme_from_string(ds.value("scheme", std::string("bio")));
      m.dataset.train = detail::resolve(base_dir, ds.at("train").get<std::string>());
      m.dataset.test = detail::resolve(base_dir, ds.at("test").get<std::string>());
      m.dataset.entity_types = ds.value("entity_types", std::vector<std::string>{});
    }

    const auto& pr = detail::obj_or_empty(j, "prompt");
    detail::check_known_keys(pr, {"fixture", "components", "high_frequency_top_k", "high_frequency_source", "order"},
                             "prompt.");
    if (pr.contains("fixture") && !pr["fixture"].is_null()) {
      m.prompt.fixture = detail::resolve(base_dir, pr["fixture"].get<std::string>());
    }
    const auto& comps = detail::obj_or_empty(pr, "components");
    detail::check_known_keys(comps, {"dataset_description", "high_frequency", "umls_knowledge", "error_feedback"},
                             "prompt.components.");
    m.prompt.dataset_description = comps.value("dataset_description", false);
    m.prompt.high_frequency = comps.value("high_frequency", false);
    m.prompt.umls_knowledge = comps.value("umls_knowledge", false);
    m.prompt.error_feedback = comps.value("error_feedback", false);
    m.prompt.high_frequency_top_k = pr.value("high_frequency_top_k", std::size_t{6});
    const auto hf_source = pr.value("high_frequency_source", std::string("computed"));
    if (hf_source != "computed" && hf_source != "fixture") {
      throw ConfigError("prompt.high_frequency_source must be 'computed' or 'fixture'");
    }
    m.prompt.high_frequency_from_fixture = hf_source == "fixture";
    if (pr.contains("order")) {
      m.prompt.order.clear();
      for (const auto& c : pr["order"]) m.prompt.order.push_back(component_from_string(c.get<std::string>()));
    }

    const auto& ex = detail::obj_or_empty(j, "examples");
    detail::check_known_keys(ex, {"format", "sampling"}, "examples.");
    m.prompt.format = example_format_from_string(ex.value("format", std::string("tokens_in_tokens_out")));
    m.prompt.sampling = sampling_from_string(ex.value("sampling", std::string("per_label")));

    if (j.contains("mode") && j.contains("modes")) throw ConfigError("manifest: give 'mode' or 'modes', not both");
    if (j.contains("engine") && j.contains("engines")) throw ConfigError("manifest: give 'engine' or 'engines', not both");
    if (const auto* mj = j.contains("modes") ? &j["modes"] : j.contains("mode") ? &j["mode"] : nullptr) {
      m.modes.clear();
      for (const auto& s : detail::scalar_or_list<std::string>(*mj)) m.modes.push_back(mode_from_string(s));
    }
    if (const auto* ej = j.contains("engines") ? &j["engines"] : j.contains("engine") ? &j["engine"] : nullptr) {
      m.engines.clear();
      for (const auto& s : detail::scalar_or_list<std::string>(*ej)) m.engines.push_back(engine_from_string(s));
    }
    if (j.contains("shots")) {
      m.shots.clear();
      for (const auto s : detail::scalar_or_list<std::int64_t>(j["shots"])) {
        if (s < 0) throw ConfigError("shots must be >= 0");
        m.shots.push_back(static_cast<std::size_t>(s));
      }
    }

    const bool has_runs = j.contains("runs");
    const bool has_seeds = j.contains("seeds");
    if (has_seeds) m.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (has_runs) {
      const auto runs = j["runs"].get<std::int64_t>();
      if (runs < 1) throw ConfigError("runs must be >= 1");
      if (!has_seeds) {
        m.seeds.clear();
        for (std::int64_t i = 1; i <= runs; ++i) m.seeds.push_back(static_cast<std::uint64_t>(i));
      } else if (static_cast<std::size_t>(runs) != m.seeds.size()) {
        throw ConfigError("runs (" + std::to_string(runs) + ") must equal the number of seeds (" +
                          std::to_string(m.seeds.size()) + ")");
      }
    }

    const auto& llm = detail::obj_or_empty(j, "llm");
    detail::check_known_keys(llm,
                             {"preset", "model", "endpoint", "api_key_env", "api_key_header", "max_concurrency",
                              "retry", "mock", "temperature", "top_p", "frequency_penalty", "presence_penalty",
                              "max_output_tokens"},
                             "llm.");
    m.llm.preset = llm.value("preset", std::string("gpt-4"));
    m.llm.params = GenerationParams::preset(m.llm.preset);
    if (llm.contains("model")) m.llm.params.model_id = llm["model"].get<std::string>();
    if (llm.contains("temperature")) m.llm.params.temperature = llm["temperature"].get<double>();
    if (llm.contains("top_p")) m.llm.params.top_p = llm["top_p"].get<double>();
    if (llm.contains("frequency_penalty")) m.llm.params.frequency_penalty = llm["frequency_penalty"].get<double>();
    if (llm.contains("presence_penalty")) m.llm.params.presence_penalty = llm["presence_penalty"].get<double>();
    if (llm.contains("max_output_tokens")) m.llm.params.max_output_tokens = llm["max_output_tokens"].get<int>();
    m.llm.endpoint = llm.value("endpoint", std::string{});
    m.llm.api_key_env = llm.value("api_key_env", m.llm.api_key_env);
    m.llm.api_key_header = llm.value("api_key_header", m.llm.api_key_header);
    const auto conc = llm.value("max_concurrency", std::int64_t{4});
    if (conc < 1) throw ConfigError("llm.max_concurrency must be >= 1");
    m.llm.max_concurrency = static_cast<std::size_t>(conc);
    const auto& retry = detail::obj_or_empty(llm, "retry");
    detail::check_known_keys(retry, {"max_attempts", "base_delay_ms", "multiplier", "max_delay_ms"}, "llm.retry.");
    m.llm.retry.max_attempts = retry.value("max_attempts", m.llm.retry.max_attempts);
    m.llm.retry.base_delay = std::chrono::milliseconds(retry.value("base_delay_ms", std::int64_t{1000}));
    m.llm.retry.multiplier = retry.value("multiplier", m.llm.retry.multiplier);
    m.llm.retry.max_delay = std::chrono::milliseconds(retry.value("max_delay_ms", std::int64_t{60000}));
    if (m.llm.retry.max_attempts < 1) throw ConfigError("llm.retry.max_attempts must be >= 1");
    if (m.llm.retry.multiplier < 1.0) throw ConfigError("llm.retry.multiplier must be >= 1");
    if (llm.contains("mock") && !llm["mock"].is_null() && llm["mock"] != false) {
      const auto& mk = llm["mock"];
      detail::check_known_keys(mk, {"behavior", "rate", "seed", "fixture", "fail_sentences"}, "llm.mock.");
      MockSpec spec;
      spec.behavior.kind = mock_kind_from_string(mk.value("behavior", std::string("gold_echo")));
      spec.behavior.rate = mk.value("rate", 0.0);
      spec.behavior.seed = mk.value("seed", std::uint64_t{0});
      if (mk.contains("fixture")) {
        const auto path = detail::resolve(base_dir, mk["fixture"].get<std::string>());
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open mock fixture " + path.string());
        spec.behavior.fixture = nlohmann::json::parse(in).get<std::map<std::string, std::string>>();
      }
      if (spec.behavior.kind == MockKind::fixture && !mk.contains("fixture")) {
        throw ConfigError("llm.mock.behavior 'fixture' requires llm.mock.fixture");
      }
      spec.fail_sentences = mk.value("fail_sentences", std::vector<std::string>{});
      spec.behavior.validate();
      m.llm.mock = std::move(spec);
    }
    m.llm.params.validate();

    const auto& em = detail::obj_or_empty(j, "embedder");
    detail::check_known_keys(em, {"kind", "url", "model", "token_env"}, "embedder.");
    m.embedder.kind = em.value("kind", std::string("fallback"));
    m.embedder.url = em.value("url", std::string{});
    m.embedder.model = em.value("model", std::string{});
    m.embedder.token_env = em.value("token_env", std::string{});
    if (m.embedder.kind != "fallback" && m.embedder.kind != "http") {
      throw ConfigError("embedder.kind must be 'fallback' or 'http'");
    }
    if (m.embedder.kind == "http" && (m.embedder.url.empty() || m.embedder.model.empty())) {
      throw ConfigError("embedder.kind 'http' requires url and model");
    }

    m.output_dir = detail::resolve(base_dir, j.value("output_dir", std::string("out")));
    const auto& cache = detail::obj_or_empty(j, "cache");
    detail::check_known_keys(cache, {"enabled", "dir"}, "cache.");
    m.use_cache = cache.value("enabled", true);
    if (cache.contains("dir")) m.cache_dir = detail::resolve(base_dir, cache["dir"].get<std::string>());

    const auto& bs = detail::obj_or_empty(j, "bootstrap");
    detail::check_known_keys(bs, {"n_boot", "level", "seed"}, "bootstrap.");
    const auto n_boot = bs.value("n_boot", std::int64_t{1000});
    if (n_boot < 1) throw ConfigError("bootstrap.n_boot must be >= 1");
    m.bootstrap.n_boot = static_cast<std::size_t>(n_boot);
    m.bootstrap.level = bs.value("level", 0.95);
    if (!(m.bootstrap.level > 0.0 && m.bootstrap.level < 1.0)) throw ConfigError("bootstrap.level must be in (0, 1)");
    m.bootstrap.seed = bs.value("seed", std::uint64_t{42});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }

  if (m.seeds.empty()) throw ConfigError("at least one seed is required");
  if (std::set<std::uint64_t>(m.seeds.begin(), m.seeds.end()).size() != m.seeds.size()) {
    throw ConfigError("seeds must be distinct");
  }
  if (m.modes.empty()) throw ConfigError("at least one mode is required");
  if (m.shots.empty()) throw ConfigError("at least one shot count is required");
  const bool dynamic = std::find(m.modes.begin(), m.modes.end(), ExampleMode::dynamic_retrieved) != m.modes.end();
  if (dynamic && m.engines.empty()) throw ConfigError("dynamic mode requires an engine");
  if (!m.llm.mock && m.llm.endpoint.empty() && std::getenv("RAGNER_ENDPOINT") == nullptr) {
    throw ConfigError("no LLM configured: set llm.endpoint, RAGNER_ENDPOINT or llm.mock");
  }
  return m;
}

/// Sets a dotted path (`llm.mock.rate`) in a manifest document. The value is
/// parsed as JSON when possible, otherwise stored as a string.
inline void apply_override(nlohmann::json& j, std::string_view key, std::string_view value) {
  if (key.empty()) throw ConfigError("empty override key");
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part(key.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start));
    if (part.empty()) throw ConfigError("malformed override key '" + std::string(key) + "'");
    if (!node->is_object()) *node = nlohmann::json::object();
    if (dot == std::string_view::npos) {
      nlohmann::json v = nlohmann::json::parse(value, nullptr, false);
      (*node)[part] = v.is_discarded() ? nlohmann::json(std::string(value)) : v;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

/// `key=value` form of apply_override.
inline void apply_override(nlohmann::json& j, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override must be key=value: " + std::string(assignment));
  apply_override(j, assignment.substr(0, eq), assignment.substr(eq + 1));
}

inline nlohmann::json read_manifest_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest " + path.string());
  try {
    return nlohmann::json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest " + path.string() + ": " + e.what());
  }
}

inline Manifest load_manifest(const std::filesystem::path& path, std::span<const std::string> overrides = {}) {
  auto j = read_manifest_json(path);
  for (const auto& o : overrides) apply_override(j, o);
  return parse_manifest(j, path.parent_path());
}

}  // namespace ragner
