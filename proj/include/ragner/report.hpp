#pragma once

// Renders the cell summaries under an output directory as JSON, CSV and
// markdown tables (dataset x method x shots).

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "ragner/error.hpp"
#include "ragner/retrieval.hpp"

namespace ragner {

enum class ReportFormat { json, csv, markdown };

inline ReportFormat report_format_from_string(std::string_view s) {
  if (s == "json") return ReportFormat::json;
  if (s == "csv") return ReportFormat::csv;
  if (s == "markdown" || s == "md") return ReportFormat::markdown;
  throw ConfigError("unknown report format '" + std::string(s) + "' (json, csv, markdown)");
}

inline std::string_view extension(ReportFormat f) {
  switch (f) {
    case ReportFormat::json: return "json";
    case ReportFormat::csv: return "csv";
    case ReportFormat::markdown: return "md";
  }
  return "json";
}

namespace detail {

inline int method_rank(const std::string& method) {
  if (method == "static") return 0;
  int i = 1;
  for (auto k : kAllEngines) {
    if (method == "rag_" + std::string(to_string(k))) return i;
    ++i;
  }
  return 100;
}

inline std::string fixed(double x, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

inline bool has_metrics(const nlohmann::json& cell) { return cell.contains("mean") && cell["mean"].is_object(); }

}  // namespace detail

/// Cell summaries sorted by (dataset, method, shots).
inline std::vector<nlohmann::json> collect_cells(const std::filesystem::path& output_dir) {
  const auto cells_dir = output_dir / "cells";
  if (!std::filesystem::is_directory(cells_dir)) {
    throw ReportError("no results under " + output_dir.string() + " (missing cells/ directory)");
  }
  std::vector<nlohmann::json> cells;
  for (const auto& entry : std::filesystem::directory_iterator(cells_dir)) {
    const auto path = entry.path() / "cell.json";
    if (!entry.is_directory() || !std::filesystem::exists(path)) continue;
    std::ifstream in(path);
    try {
      cells.push_back(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ReportError("corrupt " + path.string() + ": " + e.what());
    }
  }
  if (cells.empty()) throw ReportError("no cell results under " + cells_dir.string());
  std::sort(cells.begin(), cells.end(), [](const nlohmann::json& a, const nlohmann::json& b) {
    const auto ka = std::make_tuple(a.at("dataset").get<std::string>(), detail::method_rank(a.at("method")),
                                    a.at("method").get<std::string>(), a.at("shots").get<std::size_t>(),
                                    a.at("cell").get<std::string>());
    const auto kb = std::make_tuple(b.at("dataset").get<std::string>(), detail::method_rank(b.at("method")),
                                    b.at("method").get<std::string>(), b.at("shots").get<std::size_t>(),
                                    b.at("cell").get<std::string>());
    return ka < kb;
  });
  return cells;
}

inline std::string render_json(const std::vector<nlohmann::json>& cells) {
  nlohmann::json doc{{"cells", nlohmann::json::array()}};
  for (const auto& c : cells) {
    nlohmann::json row{{"cell", c.at("cell")},       {"dataset", c.at("dataset")}, {"method", c.at("method")},
                       {"shots", c.at("shots")},     {"status", c.value("status", "pending")}};
    if (detail::has_metrics(c)) {
      row["mean"] = c["mean"];
      row["runs"] = nlohmann::json::array();
      for (const auto& r : c.at("runs")) {
        row["runs"].push_back({{"run", r.at("run")},
                               {"seed", r.at("seed")},
                               {"metrics", r.at("metrics")},
                               {"failed", r.at("failed")},
                               {"repairs", r.at("repairs")}});
      }
    } else {
      row["mean"] = nullptr;
      row["runs"] = nlohmann::json::array();
    }
    doc["cells"].push_back(std::move(row));
  }
  return doc.dump(2) + "\n";
}

/// One row per cell: key columns, then P, R, F1 and the three CI pairs.
/// Cells without results keep their key columns and leave the rest empty.
inline std::string render_csv(const std::vector<nlohmann::json>& cells) {
  std::string out =
      "dataset,method,shots,status,precision,recall,f1,precision_ci_low,precision_ci_high,recall_ci_low,"
      "recall_ci_high,f1_ci_low,f1_ci_high\n";
  for (const auto& c : cells) {
    out += c.at("dataset").get<std::string>() + "," + c.at("method").get<std::string>() + "," +
           std::to_string(c.at("shots").get<std::size_t>()) + "," + c.value("status", std::string("pending"));
    if (detail::has_metrics(c)) {
      const auto& m = c["mean"];
      for (const char* k : {"precision", "recall", "f1"}) out += "," + detail::fixed(m.at(k).get<double>(), 6);
      for (const char* k : {"precision", "recall", "f1"}) {
        out += "," + detail::fixed(m.at("ci").at(k).at(0).get<double>(), 6);
        out += "," + detail::fixed(m.at("ci").at(k).at(1).get<double>(), 6);
      }
    } else {
      out += ",,,,,,,,,";
    }
    out += "\n";
  }
  return out;
}

/// Per-run rows followed by an AVG row per cell, scores in percent.
inline std::string render_markdown(const std::vector<nlohmann::json>& cells) {
  auto pct = [](double x) { return detail::fixed(100.0 * x, 2); };
  auto ci = [&](const nlohmann::json& m, const char* k) {
    return "[" + pct(m.at("ci").at(k).at(0).get<double>()) + ", " + pct(m.at("ci").at(k).at(1).get<double>()) + "]";
  };
  auto row = [](const std::vector<std::string>& cols) {
    std::string s = "|";
    for (const auto& c : cols) s += " " + c + " |";
    return s + "\n";
  };
  std::string out = row({"Dataset", "Method", "Shots", "Run", "P", "R", "F1", "P CI", "R CI", "F1 CI"});
  out += row({"---", "---", "---:", "---", "---:", "---:", "---:", "---", "---", "---"});
  for (const auto& c : cells) {
    const auto ds = c.at("dataset").get<std::string>();
    const auto method = c.at("method").get<std::string>();
    const auto shots = std::to_string(c.at("shots").get<std::size_t>());
    if (!detail::has_metrics(c)) {
      out += row({ds, method, shots, c.value("status", std::string("pending")), "", "", "", "", "", ""});
      continue;
    }
    auto metrics_row = [&](const std::string& label, const nlohmann::json& m) {
      out += row({ds, method, shots, label, pct(m.at("precision").get<double>()), pct(m.at("recall").get<double>()),
                  pct(m.at("f1").get<double>()), ci(m, "precision"), ci(m, "recall"), ci(m, "f1")});
    };
    for (const auto& r : c.at("runs")) metrics_row(std::to_string(r.at("run").get<int>()), r.at("metrics"));
    metrics_row("AVG", c.at("mean"));
  }
  return out;
}

inline std::string render_report(const std::vector<nlohmann::json>& cells, ReportFormat f) {
  switch (f) {
    case ReportFormat::json: return render_json(cells);
    case ReportFormat::csv: return render_csv(cells);
    case ReportFormat::markdown: return render_markdown(cells);
  }
  return {};
}

/// Writes reports/report.{json,csv,md}; returns the written paths.
inline std::vector<std::filesystem::path> write_reports(const std::filesystem::path& output_dir) {
  const auto cells = collect_cells(output_dir);
  const auto dir = output_dir / "reports";
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  for (auto f : {ReportFormat::json, ReportFormat::csv, ReportFormat::markdown}) {
    const auto path = dir / ("report." + std::string(extension(f)));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ReportError("cannot write " + path.string());
    out << render_report(cells, f);
    paths.push_back(path);
  }
  return paths;
}

}  // namespace ragner
