#pragma once

// Exact-scan example retrieval over training sentences under four engines:
// TF-IDF cosine, single-vector dense cosine, late interaction (MaxSim) and
// dual-encoder dot product.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <stdexcept>
#include <type_traits>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ragner/corpus.hpp"
#include "ragner/embedding.hpp"
#include "ragner/error.hpp"
#include "ragner/vectors.hpp"

namespace ragner {

enum class EngineKind { tfidf, dense, late_interaction, dual_encoder };

inline constexpr EngineKind kAllEngines[] = {EngineKind::tfidf, EngineKind::dense, EngineKind::late_interaction,
                                             EngineKind::dual_encoder};

inline std::string_view to_string(EngineKind k) {
  switch (k) {
    case EngineKind::tfidf: return "tfidf";
    case EngineKind::dense: return "dense";
    case EngineKind::late_interaction: return "late_interaction";
    case EngineKind::dual_encoder: return "dual_encoder";
  }
  return "tfidf";
}

inline EngineKind engine_from_string(std::string_view s) {
  for (auto k : kAllEngines) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown engine '" + std::string(s) +
                    "' (expected tfidf, dense, late_interaction or dual_encoder)");
}

struct RetrievedExample {
  std::string sentence_id;
  double score = 0.0;
  std::size_t rank = 0;  // 1-based

  bool operator==(const RetrievedExample&) const = default;
};

using Representation = std::variant<SparseVector, DenseVector, TokenMatrix>;

/// Smoothed TF-IDF weight: count * (ln((1 + N) / (1 + df)) + 1).
inline double tfidf_weight(std::int64_t term_count, std::int64_t doc_freq, std::int64_t n_docs) {
  if (term_count < 1) throw std::invalid_argument("tfidf_weight: term_count must be >= 1");
  if (doc_freq < 1 || doc_freq > n_docs) throw std::invalid_argument("tfidf_weight: need 1 <= doc_freq <= n_docs");
  const double idf = std::log((1.0 + static_cast<double>(n_docs)) / (1.0 + static_cast<double>(doc_freq))) + 1.0;
  return static_cast<double>(term_count) * idf;
}

/// tfidf/dense: cosine. late_interaction: MaxSim. dual_encoder: raw dot product.
inline double score(const Representation& query, const Representation& doc, EngineKind kind) {
  auto mismatch = [&] { return ScoringError("representation does not match engine " + std::string(to_string(kind))); };
  switch (kind) {
    case EngineKind::tfidf: {
      const auto* q = std::get_if<SparseVector>(&query);
      const auto* d = std::get_if<SparseVector>(&doc);
      if (!q || !d) throw mismatch();
      return cosine(*q, *d);
    }
    case EngineKind::dense:
    case EngineKind::dual_encoder: {
      const auto* q = std::get_if<DenseVector>(&query);
      const auto* d = std::get_if<DenseVector>(&doc);
      if (!q || !d) throw mismatch();
      if (q->dim() != d->dim()) throw ScoringError("dimension mismatch");
      return kind == EngineKind::dense ? cosine(*q, *d) : dot(*q, *d);
    }
    case EngineKind::late_interaction: {
      const auto* q = std::get_if<TokenMatrix>(&query);
      const auto* d = std::get_if<TokenMatrix>(&doc);
      if (!q || !d) throw mismatch();
      return maxsim(*q, *d);
    }
  }
  throw mismatch();
}

/// Immutable retrieval index over training sentences. Concurrent retrieve()
/// calls are safe as long as the embedder passed in is.
class Index {
 public:
  static constexpr int kSnapshotVersion = 1;
  static constexpr std::size_t kEmbedBatch = 64;

  static Index build(std::span<const LabeledSentence> train, EngineKind kind, EmbeddingProvider* embedder = nullptr) {
    if (train.empty()) throw IndexError("cannot build an index from an empty training set");
    if (kind != EngineKind::tfidf && embedder == nullptr) {
      throw IndexError("engine " + std::string(to_string(kind)) + " requires an embedding provider");
    }
    Index idx;
    idx.kind_ = kind;
    for (const auto& s : train) idx.ids_.push_back(s.id);
    if (kind == EngineKind::tfidf) {
      idx.build_tfidf(train);
    } else {
      idx.build_embedded(train, *embedder);
    }
    return idx;
  }

  EngineKind kind() const noexcept { return kind_; }
  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::string& embedder_id() const noexcept { return embedder_id_; }
  const Representation& representation(std::size_t i) const { return docs_.at(i); }
  const std::vector<std::string>& vocabulary() const noexcept { return vocab_; }

  /// Query-side encoding of a token list.
  Representation encode_query(const std::vector<std::string>& tokens, EmbeddingProvider* embedder = nullptr) const {
    if (tokens.empty()) throw IndexError("empty query");
    if (kind_ == EngineKind::tfidf) return tfidf_vector(tokens);
    if (embedder == nullptr) throw IndexError("engine " + std::string(to_string(kind_)) + " requires an embedder");
    if (embedder->model_id() != embedder_id_) {
      throw IndexError("index was built with embedder '" + embedder_id_ + "', got '" + embedder->model_id() + "'");
    }
    const TokenLists one{tokens};
    if (kind_ == EngineKind::late_interaction) return embedder->embed_tokens(one, EmbedRole::symmetric).at(0);
    const auto role = kind_ == EngineKind::dual_encoder ? EmbedRole::query : EmbedRole::symmetric;
    return embedder->embed_sentences(one, role).at(0);
  }

  /// Top min(n, size()) sentences by (score desc, id asc).
  std::vector<RetrievedExample> retrieve(const std::vector<std::string>& query_tokens, std::size_t n,
                                         EmbeddingProvider* embedder = nullptr) const {
    if (n == 0) throw IndexError("retrieve: n must be >= 1");
    const auto q = encode_query(query_tokens, embedder);
    return rank(q, n);
  }

  std::vector<RetrievedExample> rank(const Representation& q, std::size_t n) const {
    std::vector<RetrievedExample> all;
    all.reserve(docs_.size());
    for (std::size_t i = 0; i < docs_.size(); ++i) all.push_back({ids_[i], score(q, docs_[i], kind_), 0});
    const auto take = std::min(n, all.size());
    auto better = [](const RetrievedExample& a, const RetrievedExample& b) {
      return a.score != b.score ? a.score > b.score : a.sentence_id < b.sentence_id;
    };
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(), better);
    all.resize(take);
    for (std::size_t i = 0; i < all.size(); ++i) all[i].rank = i + 1;
    return all;
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"version", kSnapshotVersion}, {"kind", to_string(kind_)}, {"dim", dim_},
                     {"embedder", embedder_id_}, {"ids", ids_}};
    if (kind_ == EngineKind::tfidf) {
      j["vocabulary"] = vocab_;
      j["idf"] = idf_;
    }
    auto docs = nlohmann::json::array();
    for (const auto& d : docs_) {
      std::visit(
          [&](const auto& v) {
            using V = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<V, SparseVector>) {
              auto e = nlohmann::json::array();
              for (const auto& [id, w] : v.entries) e.push_back({id, w});
              docs.push_back(std::move(e));
            } else if constexpr (std::is_same_v<V, DenseVector>) {
              docs.push_back(v.values);
            } else {
              auto rows = nlohmann::json::array();
              for (const auto& r : v.rows) rows.push_back(r.values);
              docs.push_back(std::move(rows));
            }
          },
          d);
    }
    j["docs"] = std::move(docs);
    return j;
  }

  static Index from_json(const nlohmann::json& j) {
    Index idx;
    try {
      if (j.at("version").get<int>() != kSnapshotVersion) throw IndexError("unsupported index snapshot version");
      idx.kind_ = engine_from_string(j.at("kind").get<std::string>());
      idx.dim_ = j.at("dim").get<std::size_t>();
      idx.embedder_id_ = j.at("embedder").get<std::string>();
      idx.ids_ = j.at("ids").get<std::vector<std::string>>();
      if (idx.kind_ == EngineKind::tfidf) {
        idx.vocab_ = j.at("vocabulary").get<std::vector<std::string>>();
        idx.idf_ = j.at("idf").get<std::vector<double>>();
        for (std::size_t i = 0; i < idx.vocab_.size(); ++i) idx.term_ids_[idx.vocab_[i]] = static_cast<std::uint32_t>(i);
      }
      for (const auto& d : j.at("docs")) {
        switch (idx.kind_) {
          case EngineKind::tfidf: {
            SparseVector v;
            for (const auto& e : d) v.entries.emplace_back(e.at(0).get<std::uint32_t>(), e.at(1).get<double>());
            idx.docs_.emplace_back(std::move(v));
            break;
          }
          case EngineKind::dense:
          case EngineKind::dual_encoder:
            idx.docs_.emplace_back(DenseVector{d.get<std::vector<double>>()});
            break;
          case EngineKind::late_interaction: {
            TokenMatrix m;
            for (const auto& r : d) m.rows.push_back(DenseVector{r.get<std::vector<double>>()});
            idx.docs_.emplace_back(std::move(m));
            break;
          }
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw IndexError(std::string("malformed index snapshot: ") + e.what());
    }
    if (idx.docs_.size() != idx.ids_.size() || idx.ids_.empty()) throw IndexError("malformed index snapshot: doc count");
    return idx;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IndexError("cannot write " + path.string());
    out << to_json().dump() << '\n';
  }

  static Index load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IndexError("cannot open " + path.string());
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw IndexError(path.string() + ": " + e.what());
    }
  }

 private:
  void build_tfidf(std::span<const LabeledSentence> train) {
    std::map<std::string, std::size_t> df;
    for (const auto& s : train) {
      std::vector<std::string> terms;
      for (const auto& t : s.tokens) terms.push_back(ascii_lower(t.text));
      std::sort(terms.begin(), terms.end());
      terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
      for (auto& t : terms) ++df[t];
    }
    const auto n = static_cast<std::int64_t>(train.size());
    for (const auto& [term, f] : df) {
      term_ids_[term] = static_cast<std::uint32_t>(vocab_.size());
      vocab_.push_back(term);
      idf_.push_back(tfidf_weight(1, static_cast<std::int64_t>(f), n));
    }
    dim_ = vocab_.size();
    embedder_id_ = "tfidf";
    for (const auto& s : train) docs_.emplace_back(tfidf_vector(s.token_texts()));
  }

  SparseVector tfidf_vector(const std::vector<std::string>& tokens) const {
    std::map<std::uint32_t, std::int64_t> counts;
    for (const auto& t : tokens) {
      if (auto it = term_ids_.find(ascii_lower(t)); it != term_ids_.end()) ++counts[it->second];
    }
    SparseVector v;
    for (const auto& [id, c] : counts) v.entries.emplace_back(id, static_cast<double>(c) * idf_[id]);
    normalize(v);
    return v;
  }

  void build_embedded(std::span<const LabeledSentence> train, EmbeddingProvider& embedder) {
    embedder_id_ = embedder.model_id();
    const auto role = kind_ == EngineKind::dual_encoder ? EmbedRole::document : EmbedRole::symmetric;
    for (std::size_t begin = 0; begin < train.size(); begin += kEmbedBatch) {
      const std::size_t end = std::min(train.size(), begin + kEmbedBatch);
      TokenLists batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(train[i].token_texts());
      auto where = [&] { return "while embedding sentences " + train[begin].id + ".." + train[end - 1].id; };
      try {
        if (kind_ == EngineKind::late_interaction) {
          auto mats = embedder.embed_tokens(batch, role);
          if (mats.size() != batch.size()) throw IndexError("embedder returned wrong count " + where());
          for (std::size_t i = 0; i < mats.size(); ++i) {
            if (mats[i].rows.size() != batch[i].size()) {
              throw IndexError("embedder returned wrong token row count for " + train[begin + i].id);
            }
            check_dim(mats[i].dim(), train[begin + i].id);
            docs_.emplace_back(std::move(mats[i]));
          }
        } else {
          auto vecs = embedder.embed_sentences(batch, role);
          if (vecs.size() != batch.size()) throw IndexError("embedder returned wrong count " + where());
          for (std::size_t i = 0; i < vecs.size(); ++i) {
            check_dim(vecs[i].dim(), train[begin + i].id);
            docs_.emplace_back(std::move(vecs[i]));
          }
        }
      } catch (const EmbeddingError& e) {
        throw EmbeddingError(std::string(e.what()) + " (" + where() + ")", e.status());
      }
    }
  }

  void check_dim(std::size_t d, const std::string& id) {
    if (dim_ == 0) dim_ = d;
    if (d != dim_ || d == 0) throw IndexError("inconsistent embedding dimension for " + id);
  }

  EngineKind kind_ = EngineKind::tfidf;
  std::vector<std::string> ids_;
  std::vector<Representation> docs_;
  std::size_t dim_ = 0;
  std::string embedder_id_;
  std::vector<std::string> vocab_;
  std::vector<double> idf_;
  std::unordered_map<std::string, std::uint32_t> term_ids_;
};

}  // namespace ragner
