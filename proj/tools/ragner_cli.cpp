// ragner: command-line front end.
//
//   ragner ingest  --train T --test T [--scheme bio|plain] [--name N] --out DIR
//   ragner index   --dataset D.json --engine E --out INDEX.json
//   ragner run     MANIFEST [--set key=value ...] [--dry-run] [--no-cache] ...
//   ragner report  OUTPUT_DIR [--format json|csv|markdown|all]
//   ragner stats   --dataset D.json [--top-k K]
//
// Exit codes: 0 success, 1 runtime error, 2 configuration error,
// 3 partial failure (some sentences failed after retries).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ragner.hpp"

namespace fs = std::filesystem;
using namespace ragner;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitPartial = 3;

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string json_list(const std::string& csv, bool numeric) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& item : split_csv(csv)) {
    if (numeric) {
      try {
        arr.push_back(std::stoll(item));
      } catch (const std::exception&) {
        throw ConfigError("expected a number, got '" + item + "'");
      }
    } else {
      arr.push_back(item);
    }
  }
  return arr.dump();
}

struct IngestArgs {
  std::string train, test, scheme = "bio", name, types, out;
};

int cmd_ingest(const IngestArgs& a) {
  DatasetSource src;
  src.name = a.name.empty() ? fs::path(a.train).stem().string() : a.name;
  src.train = a.train;
  src.test = a.test;
  src.scheme = label_scheme_from_string(a.scheme);
  if (!a.types.empty()) src.entity_types = split_csv(a.types);
  const auto d = load_dataset(src);

  const fs::path out(a.out);
  fs::create_directories(out);
  for (const auto& [file, split] : {std::pair{"train.conll", &d.train}, std::pair{"test.conll", &d.test}}) {
    std::ofstream f(out / file, std::ios::binary);
    if (!f) throw Error("cannot write " + (out / file).string());
    write_conll(f, *split);
  }
  const nlohmann::json manifest{{"name", d.name},
                                {"scheme", "bio"},
                                {"train", "train.conll"},
                                {"test", "test.conll"},
                                {"entity_types", d.entity_types}};
  std::ofstream(out / "dataset.json") << manifest.dump(2) << "\n";
  auto stats = to_json(dataset_stats(d));
  stats["repaired_labels"] = d.repaired_labels;
  std::cout << stats.dump(2) << "\n";
  return kExitOk;
}

struct IndexArgs {
  std::string dataset, engine = "tfidf", out, embed_url, embed_model;
};

int cmd_index(const IndexArgs& a) {
  const auto d = load_dataset(read_dataset_manifest(a.dataset));
  const auto kind = engine_from_string(a.engine);
  std::unique_ptr<EmbeddingProvider> emb;
  if (kind != EngineKind::tfidf) {
    if (!a.embed_url.empty()) {
      if (a.embed_model.empty()) throw ConfigError("--embedder-url requires --embedder-model");
      emb = std::make_unique<HttpEmbedder>(a.embed_url, a.embed_model);
    } else {
      emb = std::make_unique<HashingEmbedder>();
    }
  }
  const auto idx = Index::build(d.train, kind, emb.get());
  idx.save(a.out);
  std::cout << nlohmann::json{{"engine", to_string(kind)},
                              {"documents", idx.size()},
                              {"dim", idx.dim()},
                              {"embedder", idx.embedder_id()},
                              {"out", a.out}}
                   .dump(2)
            << "\n";
  return kExitOk;
}

struct RunArgs {
  std::string manifest;
  std::vector<std::string> sets;
  std::string output_dir, modes, engines, shots, seeds, preset, endpoint, mock, cache_dir;
  std::optional<int> runs;
  std::optional<int> max_concurrency;
  std::optional<double> mock_rate;
  std::optional<long long> mock_seed;
  bool dry_run = false;
  bool no_cache = false;
  bool quiet = false;
};

int cmd_run(const RunArgs& a) {
  const fs::path manifest_path(a.manifest);
  auto j = read_manifest_json(manifest_path);
  const auto abs = [](const std::string& p) { return fs::absolute(p).lexically_normal().string(); };
  for (const auto& s : a.sets) apply_override(j, s);
  if (!a.output_dir.empty()) apply_override(j, "output_dir", nlohmann::json(abs(a.output_dir)).dump());
  if (!a.cache_dir.empty()) apply_override(j, "cache.dir", nlohmann::json(abs(a.cache_dir)).dump());
  if (!a.modes.empty()) {
    j.erase("mode");
    apply_override(j, "modes", json_list(a.modes, false));
  }
  if (!a.engines.empty()) {
    j.erase("engine");
    apply_override(j, "engines", json_list(a.engines, false));
  }
  if (!a.shots.empty()) apply_override(j, "shots", json_list(a.shots, true));
  if (!a.seeds.empty()) {
    apply_override(j, "seeds", json_list(a.seeds, true));
    if (!a.runs) j.erase("runs");
  }
  if (a.runs) {
    apply_override(j, "runs", std::to_string(*a.runs));
    if (a.seeds.empty()) j.erase("seeds");
  }
  if (!a.preset.empty()) apply_override(j, "llm.preset", nlohmann::json(a.preset).dump());
  if (!a.endpoint.empty()) apply_override(j, "llm.endpoint", nlohmann::json(a.endpoint).dump());
  if (a.max_concurrency) apply_override(j, "llm.max_concurrency", std::to_string(*a.max_concurrency));
  if (!a.mock.empty()) apply_override(j, "llm.mock.behavior", nlohmann::json(a.mock).dump());
  if (a.mock_rate) apply_override(j, "llm.mock.rate", nlohmann::json(*a.mock_rate).dump());
  if (a.mock_seed) apply_override(j, "llm.mock.seed", std::to_string(*a.mock_seed));
  if (a.no_cache) apply_override(j, "cache.enabled", "false");

  const auto manifest = parse_manifest(j, manifest_path.parent_path());
  if (a.dry_run) {
    Experiment ex(manifest);
    const auto bundle = first_prompt(ex);
    std::cout << "=== system ===\n" << bundle.system_message << "\n=== user ===\n" << bundle.user_message << "\n";
    return kExitOk;
  }

  RunOptions opts;
  if (!a.quiet) opts.log = &std::cerr;
  const auto summary = run_experiment(manifest, opts);
  const auto reports = write_reports(manifest.output_dir);
  nlohmann::json out{{"cells", summary.cells},
                     {"records_written", summary.records_written},
                     {"records_reused", summary.records_reused},
                     {"failed", summary.failed},
                     {"network_requests", summary.network_requests},
                     {"collapsed_cells", summary.collapsed_cells},
                     {"output_dir", manifest.output_dir.string()}};
  for (const auto& p : reports) out["reports"].push_back(p.string());
  std::cout << out.dump(2) << "\n";
  if (!summary.collapsed_cells.empty() && !a.quiet) {
    std::cerr << "note: " << summary.collapsed_cells.size()
              << " dynamic cell(s) ran once; retrieval has no seed-dependent randomness\n";
  }
  if (summary.failed > 0) {
    std::cerr << "warning: " << summary.failed << " sentence(s) failed after retries\n";
    return kExitPartial;
  }
  return kExitOk;
}

int cmd_report(const std::string& dir, const std::string& format) {
  if (format == "all") {
    for (const auto& p : write_reports(dir)) std::cout << p.string() << "\n";
    return kExitOk;
  }
  std::cout << render_report(collect_cells(dir), report_format_from_string(format));
  return kExitOk;
}

int cmd_stats(const std::string& dataset, const std::string& conll, const std::string& scheme, std::size_t top_k) {
  Dataset d;
  if (!dataset.empty()) {
    d = load_dataset(read_dataset_manifest(dataset));
  } else if (!conll.empty()) {
    d = load_conll(conll, label_scheme_from_string(scheme));
  } else {
    throw ConfigError("stats needs --dataset or --conll");
  }
  if (top_k == 0) throw ConfigError("--top-k must be >= 1");
  auto j = to_json(dataset_stats(d));
  j["name"] = d.name;
  j["repaired_labels"] = d.repaired_labels;
  j["lexicon"] = to_json(frequency_lexicon(d, top_k));
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot biomedical NER with static and retrieval-augmented prompts"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "Validate a two-column corpus and write a normalized dataset");
  ingest_cmd->add_option("--train", ingest.train, "Training split (token<TAB>label)")->required();
  ingest_cmd->add_option("--test", ingest.test, "Test split")->required();
  ingest_cmd->add_option("--scheme", ingest.scheme, "Label scheme: bio or plain");
  ingest_cmd->add_option("--name", ingest.name, "Dataset name");
  ingest_cmd->add_option("--types", ingest.types, "Comma-separated entity alphabet");
  ingest_cmd->add_option("--out", ingest.out, "Output directory")->required();

  IndexArgs index;
  auto* index_cmd = app.add_subcommand("index", "Build and save a retrieval index over the training split");
  index_cmd->add_option("--dataset", index.dataset, "Dataset sidecar JSON")->required();
  index_cmd->add_option("--engine", index.engine, "tfidf, dense, late_interaction or dual_encoder");
  index_cmd->add_option("--out", index.out, "Snapshot path")->required();
  index_cmd->add_option("--embedder-url", index.embed_url, "Embedding service base URL");
  index_cmd->add_option("--embedder-model", index.embed_model, "Embedding service model id");

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Execute an experiment manifest");
  run_cmd->add_option("manifest", run.manifest, "Manifest JSON")->required();
  run_cmd->add_option("--set", run.sets, "Override any manifest field: dotted.key=value");
  run_cmd->add_option("--output-dir", run.output_dir);
  run_cmd->add_option("--cache-dir", run.cache_dir);
  run_cmd->add_option("--mode", run.modes, "static,dynamic");
  run_cmd->add_option("--engine", run.engines, "Comma-separated engines");
  run_cmd->add_option("--shots", run.shots, "Comma-separated shot counts");
  run_cmd->add_option("--seeds", run.seeds, "Comma-separated run seeds");
  run_cmd->add_option("--runs", run.runs);
  run_cmd->add_option("--preset", run.preset, "gpt-4, gpt-3.5 or llama-3");
  run_cmd->add_option("--endpoint", run.endpoint, "Chat-completions URL");
  run_cmd->add_option("--max-concurrency", run.max_concurrency);
  run_cmd->add_option("--mock", run.mock, "gold_echo, corrupt or fixture");
  run_cmd->add_option("--mock-rate", run.mock_rate);
  run_cmd->add_option("--mock-seed", run.mock_seed);
  run_cmd->add_flag("--dry-run", run.dry_run, "Print the first assembled prompt and exit");
  run_cmd->add_flag("--no-cache", run.no_cache, "Ignore and do not write the completion cache");
  run_cmd->add_flag("-q,--quiet", run.quiet);

  std::string report_dir, report_format = "all";
  auto* report_cmd = app.add_subcommand("report", "Render reports from an output directory");
  report_cmd->add_option("output_dir", report_dir)->required();
  report_cmd->add_option("--format", report_format, "json, csv, markdown or all (writes reports/)");

  std::string stats_dataset, stats_conll, stats_scheme = "bio";
  std::size_t stats_top_k = 6;
  auto* stats_cmd = app.add_subcommand("stats", "Dataset statistics and per-type frequency lexicon");
  stats_cmd->add_option("--dataset", stats_dataset, "Dataset sidecar JSON");
  stats_cmd->add_option("--conll", stats_conll, "Single two-column file");
  stats_cmd->add_option("--scheme", stats_scheme);
  stats_cmd->add_option("--top-k", stats_top_k);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*ingest_cmd) return cmd_ingest(ingest);
    if (*index_cmd) return cmd_index(index);
    if (*run_cmd) return cmd_run(run);
    if (*report_cmd) return cmd_report(report_dir, report_format);
    if (*stats_cmd) return cmd_stats(stats_dataset, stats_conll, stats_scheme, stats_top_k);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const LabelError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
