#pragma once

// Executes a manifest's grid, persisting one JSONL record per test sentence
// per run and a cell.json summary per grid cell.
//
// Layout under output_dir:
//   cells/<dataset>__<method>__<k>shot__<hash8>/cell.json
//   cells/<dataset>__<method>__<k>shot__<hash8>/run-<i>.jsonl
//   cache/<sha256>.json

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ragner/corpus.hpp"
#include "ragner/digest.hpp"
#include "ragner/embedding.hpp"
#include "ragner/error.hpp"
#include "ragner/eval.hpp"
#include "ragner/llm.hpp"
#include "ragner/manifest.hpp"
#include "ragner/mock_llm.hpp"
#include "ragner/parse.hpp"
#include "ragner/prompt.hpp"
#include "ragner/retrieval.hpp"
#include "ragner/rng.hpp"

namespace ragner {

namespace fs = std::filesystem;

/// Thrown by the crash hook in RunOptions to simulate an interrupted process.
class SimulatedCrash : public Error {
 public:
  SimulatedCrash() : Error("simulated crash") {}
};

struct RunOptions {
  std::ostream* log = nullptr;
  /// Test hook: after this many records have been written, write half of the
  /// next record and throw SimulatedCrash.
  std::optional<std::size_t> crash_after_records;
};

struct RunSummary {
  std::size_t cells = 0;
  std::size_t records_written = 0;
  std::size_t records_reused = 0;
  std::size_t failed = 0;
  std::size_t network_requests = 0;
  std::vector<std::string> collapsed_cells;
  std::vector<fs::path> cell_dirs;
};

struct CellSpec {
  ExampleMode mode = ExampleMode::static_random;
  std::optional<EngineKind> engine;
  std::size_t shots = 0;

  std::string method() const {
    return mode == ExampleMode::static_random ? "static" : "rag_" + std::string(to_string(*engine));
  }
};

/// Static cells ignore the engine, so they appear once per shot count.
inline std::vector<CellSpec> expand_grid(const Manifest& m) {
  std::vector<CellSpec> cells;
  for (const auto mode : m.modes) {
    for (const auto k : m.shots) {
      if (mode == ExampleMode::static_random) {
        cells.push_back({mode, std::nullopt, k});
      } else {
        for (const auto e : m.engines) cells.push_back({mode, e, k});
      }
    }
  }
  return cells;
}

inline std::string file_sha256(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(data);
}

inline void write_file_atomic(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    if (!out) throw Error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

/// Everything a cell needs, resolved once per experiment.
class Experiment {
 public:
  explicit Experiment(Manifest m) : m_(std::move(m)) {
    dataset_ = load_dataset(m_.dataset);
    if (dataset_.test.empty()) throw EmptyDatasetError(dataset_.name + ": empty test split");
    alphabet_ = LabelAlphabet::from_types(dataset_.entity_types);
    dataset_digest_ = file_sha256(m_.dataset.train) + file_sha256(m_.dataset.test);
    components_ = make_components();
    params_ = m_.llm.params;
  }

  const Manifest& manifest() const noexcept { return m_; }
  const Dataset& dataset() const noexcept { return dataset_; }
  const LabelAlphabet& alphabet() const noexcept { return alphabet_; }
  const PromptComponents& components() const noexcept { return components_; }

  /// Dynamic cells draw nothing at random, so their runs are identical unless
  /// the mock's corruption depends on the run seed.
  bool collapses(const CellSpec& c) const {
    return c.mode == ExampleMode::dynamic_retrieved &&
           !(m_.llm.mock && m_.llm.mock->behavior.kind == MockKind::corrupt);
  }

  std::vector<std::uint64_t> run_seeds(const CellSpec& c) const {
    if (collapses(c)) return {m_.seeds.front()};
    return m_.seeds;
  }

  /// Seed of the corrupting mock for one run.
  std::uint64_t mock_seed(std::uint64_t run_seed) const {
    return m_.llm.mock ? mix_seed(m_.llm.mock->behavior.seed, run_seed) : 0;
  }

  std::string endpoint() const {
    if (m_.llm.mock) return m_.llm.mock->behavior.endpoint();
    return m_.llm.endpoint.empty() ? endpoint_from_env().url : m_.llm.endpoint;
  }

  nlohmann::json cell_config(const CellSpec& c) const {
    nlohmann::json j{{"dataset", dataset_.name},
                     {"dataset_digest", dataset_digest_},
                     {"mode", mode_name(c.mode)},
                     {"engine", c.engine ? nlohmann::json(to_string(*c.engine)) : nlohmann::json(nullptr)},
                     {"shots", c.shots},
                     {"seeds", run_seeds(c)},
                     {"format", to_string(m_.prompt.format)},
                     {"sampling", to_string(m_.prompt.sampling)},
                     {"system_message", components_.base.task_description},
                     {"prompt_digest_base", prompt_digest(render_system_message(components_.base), component_texts())},
                     {"params",
                      {{"model", params_.model_id},
                       {"temperature", params_.temperature},
                       {"top_p", params_.top_p},
                       {"frequency_penalty", params_.frequency_penalty},
                       {"presence_penalty", params_.presence_penalty},
                       {"max_output_tokens", params_.max_output_tokens ? nlohmann::json(*params_.max_output_tokens)
                                                                       : nlohmann::json(nullptr)}}},
                     {"endpoint", endpoint()},
                     {"embedder", embedder_id(c)},
                     {"bootstrap", {{"n_boot", m_.bootstrap.n_boot}, {"level", m_.bootstrap.level}, {"seed", m_.bootstrap.seed}}}};
    if (m_.llm.mock) {
      j["mock"] = {{"behavior", to_string(m_.llm.mock->behavior.kind)},
                   {"rate", m_.llm.mock->behavior.rate},
                   {"seed", m_.llm.mock->behavior.seed},
                   {"fail_sentences", m_.llm.mock->fail_sentences}};
    }
    return j;
  }

  std::string cell_name(const CellSpec& c) const {
    return dataset_.name + "__" + c.method() + "__" + std::to_string(c.shots) + "shot__" +
           sha256_hex(cell_config(c).dump()).substr(0, 8);
  }

  fs::path cell_dir(const CellSpec& c) const { return m_.output_dir / "cells" / cell_name(c); }

  EmbeddingProvider* embedder() {
    if (!embedder_) {
      if (m_.embedder.kind == "http") {
        const char* tok = m_.embedder.token_env.empty() ? nullptr : std::getenv(m_.embedder.token_env.c_str());
        embedder_ = std::make_unique<HttpEmbedder>(m_.embedder.url, m_.embedder.model, tok ? tok : "");
      } else {
        embedder_ = std::make_unique<HashingEmbedder>();
      }
    }
    return embedder_.get();
  }

  const Index& index(EngineKind kind) {
    auto it = indexes_.find(kind);
    if (it == indexes_.end()) {
      if (dataset_.train.empty()) throw IndexError(dataset_.name + ": empty train split");
      it = indexes_
               .emplace(kind, Index::build(dataset_.train, kind, kind == EngineKind::tfidf ? nullptr : embedder()))
               .first;
    }
    return it->second;
  }

  /// Examples for one query: a fixed draw per run (static) or the top-k
  /// retrieved sentences in rank order (dynamic).
  std::vector<LabeledSentence> static_examples(const CellSpec& c, std::uint64_t run_seed) const {
    ExampleBlockConfig cfg = components_.examples;
    cfg.mode = ExampleMode::static_random;
    cfg.k = c.shots;
    cfg.seed = run_seed;
    return sample_static_examples(dataset_, cfg);
  }

  std::vector<LabeledSentence> retrieved_examples(const CellSpec& c, const LabeledSentence& query) {
    if (c.shots == 0) return {};
    const auto& idx = index(*c.engine);
    std::vector<LabeledSentence> out;
    for (const auto& r : idx.retrieve(query.token_texts(), c.shots, *c.engine == EngineKind::tfidf ? nullptr : embedder())) {
      out.push_back(*dataset_.find(r.sentence_id));
    }
    return out;
  }

  PromptComponents cell_components(const CellSpec& c) const {
    auto pc = components_;
    pc.examples.mode = c.mode;
    pc.examples.k = c.shots;
    pc.examples.engine = c.engine;
    return pc;
  }

 private:
  std::string embedder_id(const CellSpec& c) const {
    if (!c.engine || *c.engine == EngineKind::tfidf || c.mode == ExampleMode::static_random) return "";
    return m_.embedder.kind == "http" ? "http:" + m_.embedder.url + "#" + m_.embedder.model : "hashing-char3-256";
  }

  std::string component_texts() const {
    std::string s;
    for (const auto* tc : {&components_.dataset_description, &components_.umls_knowledge, &components_.error_feedback}) {
      s += tc->enabled ? tc->text : std::string();
      s += '\x1f';
    }
    if (components_.high_frequency.enabled) {
      s += components_.high_frequency.text.empty() ? render_lexicon(components_.high_frequency.lexicon)
                                                   : components_.high_frequency.text;
    }
    s += '\x1f';
    for (const auto c : components_.order) s += std::string(to_string(c)) + ",";
    return s;
  }

  PromptComponents make_components() const {
    PromptComponents pc;
    pc.order = m_.prompt.order;
    pc.examples.format = m_.prompt.format;
    pc.examples.sampling = m_.prompt.sampling;
    std::optional<PromptFixture> fx;
    if (m_.prompt.fixture) fx = load_prompt_fixture(*m_.prompt.fixture);
    if (fx) {
      pc.base = fx->base;
    } else {
      pc.base = default_base();
    }
    auto text = [&](bool enabled, const std::optional<std::string>& src, const char* name) {
      TextComponent tc;
      tc.enabled = enabled;
      if (enabled) {
        if (!src) throw ConfigError(std::string("component '") + name + "' is enabled but the prompt fixture has no [" +
                                    name + "] section");
        tc.text = *src;
      }
      return tc;
    };
    pc.dataset_description = text(m_.prompt.dataset_description, fx ? fx->dataset_description : std::nullopt,
                                  "dataset_description");
    pc.umls_knowledge = text(m_.prompt.umls_knowledge, fx ? fx->umls_knowledge : std::nullopt, "umls_knowledge");
    pc.error_feedback = text(m_.prompt.error_feedback, fx ? fx->error_feedback : std::nullopt, "error_feedback");
    pc.high_frequency.enabled = m_.prompt.high_frequency;
    pc.high_frequency.top_k = m_.prompt.high_frequency_top_k;
    if (m_.prompt.high_frequency) {
      if (m_.prompt.high_frequency_from_fixture) {
        if (!fx || !fx->high_frequency) throw ConfigError("high_frequency_source 'fixture' needs a [high_frequency] section");
        pc.high_frequency.text = *fx->high_frequency;
      } else {
        pc.high_frequency.lexicon = frequency_lexicon(dataset_, m_.prompt.high_frequency_top_k);
      }
    }
    return pc;
  }

  BaseComponent default_base() const {
    BaseComponent b;
    std::string types;
    for (std::size_t i = 0; i < dataset_.entity_types.size(); ++i) {
      if (i) types += ", ";
      types += dataset_.entity_types[i];
    }
    b.task_description = "You are a biomedical named entity recognition system. Identify entities of these types: " +
                         types + ".";
    b.format_spec =
        "The input is a list of tokens that have already been tokenized. Return each token concatenated with its "
        "label as 'token-LABEL', using BIO labels (B-TYPE, I-TYPE, O), one item per input token, as a Python list.";
    return b;
  }

  Manifest m_;
  Dataset dataset_;
  LabelAlphabet alphabet_;
  std::string dataset_digest_;
  PromptComponents components_;
  GenerationParams params_;
  std::unique_ptr<EmbeddingProvider> embedder_;
  std::map<EngineKind, Index> indexes_;
};

// ---------------------------------------------------------------------------
// Records

namespace detail {

/// Reads complete JSONL records, dropping a torn trailing line.
inline std::vector<nlohmann::json> read_records(const fs::path& path) {
  std::vector<nlohmann::json> out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    if (in.eof()) break;  // no trailing newline: torn write
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("sentence_id")) break;
    out.push_back(std::move(j));
  }
  return out;
}

inline std::string record_line(const nlohmann::json& j) { return j.dump() + "\n"; }

inline nlohmann::json repair_tally() {
  return {{"none", 0}, {"length_mismatch", 0}, {"token_mismatch", 0}, {"unparseable", 0}};
}

}  // namespace detail

/// One test sentence: prompt, completion, parse and score.
struct SentenceOutcome {
  nlohmann::json record;
  bool failed = false;
};

class CellRunner {
 public:
  CellRunner(Experiment& ex, const CellSpec& cell, std::shared_ptr<CompletionCache> cache, RunOptions opts,
             RunSummary& summary)
      : ex_(ex), cell_(cell), cache_(std::move(cache)), opts_(opts), summary_(summary) {}

  /// Returns the cell.json document.
  nlohmann::json run() {
    const auto dir = ex_.cell_dir(cell_);
    fs::create_directories(dir);
    const auto seeds = ex_.run_seeds(cell_);
    auto cell_doc = header(seeds);
    if (!fs::exists(dir / "cell.json")) {
      auto pending = cell_doc;
      pending["status"] = "pending";
      write_file_atomic(dir / "cell.json", pending.dump(2) + "\n");
    }

    nlohmann::json runs = nlohmann::json::array();
    std::vector<MetricReport> reports;
    std::size_t failed_total = 0;
    for (std::size_t r = 0; r < seeds.size(); ++r) {
      const auto path = dir / ("run-" + std::to_string(r + 1) + ".jsonl");
      const auto records = run_one(r, seeds[r], path);
      std::vector<Counts> per_sentence;
      auto repairs = detail::repair_tally();
      std::size_t failed = 0;
      for (const auto& rec : records) {
        per_sentence.push_back({rec.at("tp").get<std::size_t>(), rec.at("fp").get<std::size_t>(),
                                rec.at("fn").get<std::size_t>()});
        repairs[rec.at("repair").get<std::string>()] = repairs[rec.at("repair").get<std::string>()].get<int>() + 1;
        if (rec.at("status") != "ok") ++failed;
      }
      const auto& bs = ex_.manifest().bootstrap;
      auto report = evaluate_run(per_sentence, bs.n_boot, bs.seed, bs.level);
      reports.push_back(report);
      failed_total += failed;
      runs.push_back({{"run", r + 1},
                      {"seed", seeds[r]},
                      {"mock_seed", ex_.manifest().llm.mock ? nlohmann::json(ex_.mock_seed(seeds[r])) : nlohmann::json(nullptr)},
                      {"file", path.filename().string()},
                      {"sentences", records.size()},
                      {"failed", failed},
                      {"repairs", repairs},
                      {"metrics", to_json(report)}});
    }
    summary_.failed += failed_total;
    cell_doc["runs"] = runs;
    cell_doc["mean"] = to_json(aggregate_runs(reports).mean);
    cell_doc["failed"] = failed_total;
    cell_doc["status"] = failed_total == 0 ? "complete" : "partial";
    write_file_atomic(dir / "cell.json", cell_doc.dump(2) + "\n");
    return cell_doc;
  }

  /// Prompt for the i-th test sentence of run `r`, without any LLM call.
  PromptBundle prompt_for(std::uint64_t run_seed, const LabeledSentence& query) {
    const auto pc = ex_.cell_components(cell_);
    const auto examples = cell_.mode == ExampleMode::static_random ? ex_.static_examples(cell_, run_seed)
                                                                   : ex_.retrieved_examples(cell_, query);
    return build_prompt(pc, examples, query.tokens);
  }

 private:
  nlohmann::json header(const std::vector<std::uint64_t>& seeds) const {
    return {{"cell", ex_.cell_name(cell_)},
            {"dataset", ex_.dataset().name},
            {"method", cell_.method()},
            {"mode", mode_name(cell_.mode)},
            {"engine", cell_.engine ? nlohmann::json(to_string(*cell_.engine)) : nlohmann::json(nullptr)},
            {"shots", cell_.shots},
            {"seeds", seeds},
            {"collapsed", ex_.collapses(cell_) && ex_.manifest().seeds.size() > 1},
            {"test_sentences", ex_.dataset().test.size()},
            {"config", ex_.cell_config(cell_)}};
  }

  std::vector<nlohmann::json> run_one(std::size_t r, std::uint64_t run_seed, const fs::path& path) {
    const auto& test = ex_.dataset().test;
    std::unordered_map<std::string, nlohmann::json> done;
    bool needs_rewrite = false;
    {
      auto existing = detail::read_records(path);
      for (auto& rec : existing) {
        const auto id = rec.at("sentence_id").get<std::string>();
        if (rec.value("status", std::string{}) != "ok") {
          needs_rewrite = true;  // failed sentences are retried
          continue;
        }
        done.emplace(id, std::move(rec));
      }
      if (fs::exists(path)) {
        // Rewrite without torn or failed lines so appends stay well-formed.
        std::string body;
        for (const auto& s : test) {
          if (auto it = done.find(s.id); it != done.end()) body += detail::record_line(it->second);
        }
        if (needs_rewrite || body.size() != fs::file_size(path)) write_file_atomic(path, body);
      }
    }
    summary_.records_reused += done.size();

    std::vector<const LabeledSentence*> todo;
    for (const auto& s : test) {
      if (!done.contains(s.id)) todo.push_back(&s);
    }

    if (!todo.empty()) {
      auto client = make_client(run_seed);
      std::ofstream out(path, std::ios::binary | std::ios::app);
      if (!out) throw Error("cannot append to " + path.string());
      const std::size_t chunk = std::max<std::size_t>(1, ex_.manifest().llm.max_concurrency);
      // Static examples are fixed per run; compute once before fanning out.
      std::optional<std::vector<LabeledSentence>> static_ex;
      if (cell_.mode == ExampleMode::static_random) static_ex = ex_.static_examples(cell_, run_seed);
      // Dynamic retrieval touches the lazily built index; build it up front.
      if (cell_.mode == ExampleMode::dynamic_retrieved && cell_.shots > 0) ex_.index(*cell_.engine);
      for (std::size_t i = 0; i < todo.size(); i += chunk) {
        std::vector<std::future<SentenceOutcome>> futs;
        for (std::size_t k = i; k < std::min(todo.size(), i + chunk); ++k) {
          futs.push_back(std::async(std::launch::async, [&, k] {
            return process(*todo[k], r, run_seed, static_ex, *client.client, client.mock.get(), client.transport.get());
          }));
        }
        for (auto& f : futs) {
          auto outcome = f.get();
          const auto line = detail::record_line(outcome.record);
          if (opts_.crash_after_records && summary_.records_written >= *opts_.crash_after_records) {
            out << line.substr(0, line.size() / 2);
            out.flush();
            throw SimulatedCrash();
          }
          out << line;
          out.flush();
          ++summary_.records_written;
          done.emplace(outcome.record.at("sentence_id").get<std::string>(), std::move(outcome.record));
        }
      }
      summary_.network_requests += client.client->network_requests();
    }

    // Canonical order: identical bytes whether or not the run was resumed.
    std::vector<nlohmann::json> ordered;
    std::string body;
    for (const auto& s : test) {
      auto& rec = done.at(s.id);
      body += detail::record_line(rec);
      ordered.push_back(rec);
    }
    std::ifstream cur(path, std::ios::binary);
    const std::string current((std::istreambuf_iterator<char>(cur)), std::istreambuf_iterator<char>());
    if (current != body) write_file_atomic(path, body);
    return ordered;
  }

  struct ClientBundle {
    std::shared_ptr<MockLlm> mock;
    std::shared_ptr<MockTransport> transport;
    std::unique_ptr<ChatClient> client;
  };

  ClientBundle make_client(std::uint64_t run_seed) {
    const auto& m = ex_.manifest();
    ClientOptions co;
    co.max_concurrency = m.llm.max_concurrency;
    if (m.use_cache) co.cache = cache_;
    ClientBundle b;
    if (m.llm.mock) {
      auto behavior = m.llm.mock->behavior;
      behavior.seed = ex_.mock_seed(run_seed);
      b.mock = std::make_shared<MockLlm>(behavior, ex_.alphabet());
      b.transport = std::make_shared<MockTransport>(b.mock);
      b.client = std::make_unique<ChatClient>(b.transport, co);
    } else {
      HttpEndpoint ep;
      ep.url = m.llm.endpoint;
      if (const char* key = std::getenv(m.llm.api_key_env.c_str())) ep.api_key = key;
      ep.api_key_header = m.llm.api_key_header;
      ep = endpoint_from_env(ep);
      b.client = std::make_unique<ChatClient>(std::make_shared<HttpChatTransport>(ep), co);
    }
    return b;
  }

  SentenceOutcome process(const LabeledSentence& s, std::size_t r, std::uint64_t run_seed,
                          const std::optional<std::vector<LabeledSentence>>& static_ex, ChatClient& client,
                          MockLlm* mock, MockTransport* transport) {
    const auto pc = ex_.cell_components(cell_);
    const auto examples = static_ex ? *static_ex : ex_.retrieved_examples(cell_, s);
    const auto bundle = build_prompt(pc, examples, s.tokens);
    const auto digest = prompt_digest(bundle);
    if (mock) {
      mock->register_gold(digest, s.tokens, s.labels);
      const auto& fails = ex_.manifest().llm.mock->fail_sentences;
      if (std::find(fails.begin(), fails.end(), s.id) != fails.end()) transport->fail_digest(digest);
      if (mock->behavior().kind == MockKind::fixture && !mock->behavior().fixture.contains(digest)) {
        throw ConfigError("mock fixture has no response for prompt " + digest + " (sentence " + s.id + ")");
      }
    }

    SentenceOutcome o;
    std::string raw;
    std::string error;
    try {
      raw = client.complete(bundle, ex_.manifest().llm.params, ex_.manifest().llm.retry).raw_text;
    } catch (const TransportError& e) {
      o.failed = true;
      error = e.what();
    } catch (const ProtocolError& e) {
      o.failed = true;
      error = e.what();
    }

    const auto pred = o.failed ? parse_response("", s.tokens, ex_.alphabet()) : parse_response(raw, s.tokens, ex_.alphabet());
    const auto counts = match_spans(extract_spans(s), to_spans(pred));
    o.record = {{"sentence_id", s.id},
                {"run", r + 1},
                {"seed", run_seed},
                {"prompt_digest", digest},
                {"example_ids", bundle.included_example_ids},
                {"status", o.failed ? "failed" : "ok"},
                {"response", raw},
                {"labels", pred.labels},
                {"repair", to_string(pred.repair)},
                {"dropped_items", pred.dropped_items},
                {"filled_items", pred.filled_items},
                {"matched_items", pred.matched_items},
                {"tp", counts.tp},
                {"fp", counts.fp},
                {"fn", counts.fn}};
    if (o.failed) o.record["error"] = error;
    return o;
  }

  Experiment& ex_;
  CellSpec cell_;
  std::shared_ptr<CompletionCache> cache_;
  RunOptions opts_;
  RunSummary& summary_;
};

/// First assembled prompt of the grid (first cell, first run, first test
/// sentence). No LLM or cache is touched.
inline PromptBundle first_prompt(Experiment& ex) {
  const auto cells = expand_grid(ex.manifest());
  RunSummary dummy;
  CellRunner runner(ex, cells.front(), nullptr, {}, dummy);
  return runner.prompt_for(ex.run_seeds(cells.front()).front(), ex.dataset().test.front());
}

inline RunSummary run_experiment(const Manifest& manifest, RunOptions opts = {}) {
  Experiment ex(manifest);
  RunSummary summary;
  std::shared_ptr<CompletionCache> cache;
  if (manifest.use_cache) cache = std::make_shared<CompletionCache>(manifest.effective_cache_dir());
  for (const auto& cell : expand_grid(manifest)) {
    if (opts.log) *opts.log << "cell " << ex.cell_name(cell) << "\n";
    CellRunner runner(ex, cell, cache, opts, summary);
    const auto doc = runner.run();
    if (doc.at("collapsed").get<bool>()) summary.collapsed_cells.push_back(doc.at("cell").get<std::string>());
    summary.cell_dirs.push_back(ex.cell_dir(cell));
    ++summary.cells;
  }
  return summary;
}

}  // namespace ragner
