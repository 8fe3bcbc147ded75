#pragma once

// Embedding providers for the dense, late-interaction and dual-encoder
// engines: the offline hashing fallback, an HTTP client for the embedding
// service, and the service's request handler (shared by both so they obey
// one schema).

#include <cstddef>
#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "ragner/corpus.hpp"
#include "ragner/error.hpp"
#include "ragner/vectors.hpp"

namespace ragner {

enum class Granularity { sentence, token };
enum class EmbedRole { query, document, symmetric };

inline std::string_view to_string(Granularity g) { return g == Granularity::sentence ? "sentence" : "token"; }
inline std::string_view to_string(EmbedRole r) {
  switch (r) {
    case EmbedRole::query: return "query";
    case EmbedRole::document: return "document";
    case EmbedRole::symmetric: return "symmetric";
  }
  return "symmetric";
}

using TokenLists = std::vector<std::vector<std::string>>;

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  virtual std::string model_id() const = 0;
  virtual std::size_t dim() const = 0;
  /// One unit-norm vector per text, in request order.
  virtual std::vector<DenseVector> embed_sentences(const TokenLists& texts, EmbedRole role) = 0;
  /// One matrix per text with one unit-norm row per token.
  virtual std::vector<TokenMatrix> embed_tokens(const TokenLists& texts, EmbedRole role) = 0;
};

// ---------------------------------------------------------------------------
// Hashing fallback

inline constexpr std::size_t kFallbackDim = 256;

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Signed feature hashing of the character 3-grams of `<token>` (lowercased,
/// with boundary markers), L2-normalized.
inline DenseVector fallback_embed_token(std::string_view token, std::size_t dim = kFallbackDim) {
  DenseVector v;
  v.values.assign(dim, 0.0);
  const std::string padded = "<" + ascii_lower(token) + ">";
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
    const std::uint64_t h = detail::fnv1a(std::string_view(padded).substr(i, 3));
    const double sign = (h >> 63) ? -1.0 : 1.0;
    v.values[h % dim] += sign;
  }
  if (norm(v) == 0.0) {
    // every gram cancelled out
    v.values[detail::fnv1a(padded) % dim] = 1.0;
  }
  normalize(v);
  return v;
}

inline TokenMatrix fallback_embed_tokens(const std::vector<std::string>& tokens, std::size_t dim = kFallbackDim) {
  if (tokens.empty()) throw EmbeddingError("fallback_embed: empty token list", 400);
  TokenMatrix m;
  m.rows.reserve(tokens.size());
  for (const auto& t : tokens) m.rows.push_back(fallback_embed_token(t, dim));
  return m;
}

/// Normalized mean of the token vectors.
inline DenseVector fallback_embed_sentence(const std::vector<std::string>& tokens, std::size_t dim = kFallbackDim) {
  auto m = fallback_embed_tokens(tokens, dim);
  if (m.rows.size() == 1) return std::move(m.rows.front());
  DenseVector v;
  v.values.assign(dim, 0.0);
  for (const auto& row : m.rows) {
    for (std::size_t i = 0; i < dim; ++i) v.values[i] += row.values[i];
  }
  for (auto& x : v.values) x /= static_cast<double>(m.rows.size());
  if (norm(v) == 0.0) return std::move(m.rows.front());
  normalize(v);
  return v;
}

class HashingEmbedder final : public EmbeddingProvider {
 public:
  explicit HashingEmbedder(std::size_t dim = kFallbackDim) : dim_(dim) {}

  std::string model_id() const override { return "hashing-char3-" + std::to_string(dim_); }
  std::size_t dim() const override { return dim_; }

  std::vector<DenseVector> embed_sentences(const TokenLists& texts, EmbedRole) override {
    std::vector<DenseVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(fallback_embed_sentence(t, dim_));
    return out;
  }

  std::vector<TokenMatrix> embed_tokens(const TokenLists& texts, EmbedRole) override {
    std::vector<TokenMatrix> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(fallback_embed_tokens(t, dim_));
    return out;
  }

 private:
  std::size_t dim_;
};

// ---------------------------------------------------------------------------
// Wire schema

namespace detail {

inline nlohmann::json vector_json(const DenseVector& v) { return v.values; }

inline DenseVector vector_from_json(const nlohmann::json& j) {
  DenseVector v;
  v.values = j.get<std::vector<double>>();
  return v;
}

inline TokenLists split_whitespace(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return {out};
}

inline EmbedRole role_from_string(std::string_view s) {
  if (s == "query") return EmbedRole::query;
  if (s == "document") return EmbedRole::document;
  if (s == "symmetric") return EmbedRole::symmetric;
  throw EmbeddingError("unknown role '" + std::string(s) + "'", 400);
}

}  // namespace detail

inline nlohmann::json make_embed_request(const TokenLists& texts, Granularity g, EmbedRole role,
                                         const std::string& model) {
  return {{"texts", texts}, {"granularity", to_string(g)}, {"role", to_string(role)}, {"model", model}};
}

/// Handles a POST /embed body for `provider`. Throws EmbeddingError whose
/// status is 400 (malformed), 404 (unknown model) or 500 (encoder failure).
inline nlohmann::json serve_embed_request(EmbeddingProvider& provider, const nlohmann::json& req) {
  if (!req.is_object() || !req.contains("texts") || !req["texts"].is_array() || req["texts"].empty()) {
    throw EmbeddingError("request must carry a non-empty 'texts' array", 400);
  }
  const std::string model = req.value("model", provider.model_id());
  if (model != provider.model_id()) throw EmbeddingError("unknown model '" + model + "'", 404);
  const std::string gran = req.value("granularity", std::string("sentence"));
  if (gran != "sentence" && gran != "token") throw EmbeddingError("unknown granularity '" + gran + "'", 400);
  const EmbedRole role = detail::role_from_string(req.value("role", std::string("symmetric")));

  TokenLists texts;
  for (const auto& t : req["texts"]) {
    if (t.is_string()) {
      if (gran == "token") throw EmbeddingError("token granularity requires token lists", 400);
      texts.push_back(detail::split_whitespace(t.get<std::string>()).front());
    } else if (t.is_array() && !t.empty() &&
               std::all_of(t.begin(), t.end(), [](const nlohmann::json& x) { return x.is_string(); })) {
      texts.push_back(t.get<std::vector<std::string>>());
    } else {
      throw EmbeddingError("each text must be a string or a non-empty list of strings", 400);
    }
    if (texts.back().empty()) throw EmbeddingError("empty text", 400);
  }

  nlohmann::json resp{{"dim", provider.dim()}, {"model", model}};
  auto vectors = nlohmann::json::array();
  try {
    if (gran == "sentence") {
      for (const auto& v : provider.embed_sentences(texts, role)) vectors.push_back(detail::vector_json(v));
    } else {
      for (const auto& m : provider.embed_tokens(texts, role)) {
        auto rows = nlohmann::json::array();
        for (const auto& r : m.rows) rows.push_back(detail::vector_json(r));
        vectors.push_back(std::move(rows));
      }
    }
  } catch (const EmbeddingError&) {
    throw;
  } catch (const std::exception& e) {
    throw EmbeddingError(std::string("encoder failure: ") + e.what(), 500);
  }
  resp["vectors"] = std::move(vectors);
  return resp;
}

inline nlohmann::json serve_info(const EmbeddingProvider& provider) {
  return {{"models", {provider.model_id()}},
          {"dims", {{provider.model_id(), provider.dim()}}},
          {"roles", {"query", "document", "symmetric"}}};
}

/// Mounts /embed, /info and /healthz on `server`, backed by `provider`.
inline void mount_embed_service(httplib::Server& server, std::shared_ptr<EmbeddingProvider> provider) {
  server.Post("/embed", [provider](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto body = nlohmann::json::parse(req.body);
      res.set_content(serve_embed_request(*provider, body).dump(), "application/json");
    } catch (const nlohmann::json::exception& e) {
      res.status = 400;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    } catch (const EmbeddingError& e) {
      res.status = e.status() ? e.status() : 500;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    }
  });
  server.Get("/info", [provider](const httplib::Request&, httplib::Response& res) {
    res.set_content(serve_info(*provider).dump(), "application/json");
  });
  server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { res.set_content("ok", "text/plain"); });
}

// ---------------------------------------------------------------------------
// HTTP client

/// Client for the embedding service. `base_url` is e.g. `http://localhost:8088`.
class HttpEmbedder final : public EmbeddingProvider {
 public:
  HttpEmbedder(std::string base_url, std::string model, std::string token = {})
      : base_url_(std::move(base_url)), model_(std::move(model)), token_(std::move(token)) {}

  std::string model_id() const override { return model_; }

  std::size_t dim() const override {
    if (dim_ == 0) {
      auto cli = client();
      auto res = cli.Get("/info");
      if (!res) throw EmbeddingError("embedding service unreachable at " + base_url_);
      if (res->status != 200) throw EmbeddingError("GET /info: HTTP " + std::to_string(res->status), res->status);
      try {
        dim_ = nlohmann::json::parse(res->body).at("dims").at(model_).get<std::size_t>();
      } catch (const nlohmann::json::exception& e) {
        throw EmbeddingError(std::string("GET /info: ") + e.what());
      }
    }
    return dim_;
  }

  std::vector<DenseVector> embed_sentences(const TokenLists& texts, EmbedRole role) override {
    const auto resp = post(make_embed_request(texts, Granularity::sentence, role, model_));
    std::vector<DenseVector> out;
    try {
      for (const auto& v : resp.at("vectors")) out.push_back(detail::vector_from_json(v));
    } catch (const nlohmann::json::exception& e) {
      throw EmbeddingError(std::string("malformed /embed response: ") + e.what());
    }
    check_count(out.size(), texts.size());
    return out;
  }

  std::vector<TokenMatrix> embed_tokens(const TokenLists& texts, EmbedRole role) override {
    const auto resp = post(make_embed_request(texts, Granularity::token, role, model_));
    std::vector<TokenMatrix> out;
    try {
      for (const auto& m : resp.at("vectors")) {
        TokenMatrix tm;
        for (const auto& r : m) tm.rows.push_back(detail::vector_from_json(r));
        out.push_back(std::move(tm));
      }
    } catch (const nlohmann::json::exception& e) {
      throw EmbeddingError(std::string("malformed /embed response: ") + e.what());
    }
    check_count(out.size(), texts.size());
    return out;
  }

 private:
  httplib::Client client() const {
    httplib::Client cli(base_url_);
    cli.set_read_timeout(120, 0);
    if (!token_.empty()) cli.set_default_headers({{"X-Embed-Token", token_}});
    return cli;
  }

  nlohmann::json post(const nlohmann::json& body) const {
    auto cli = client();
    auto res = cli.Post("/embed", body.dump(), "application/json");
    if (!res) throw EmbeddingError("embedding service unreachable at " + base_url_);
    if (res->status != 200) {
      throw EmbeddingError("POST /embed: HTTP " + std::to_string(res->status) + ": " + res->body, res->status);
    }
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw EmbeddingError(std::string("malformed /embed response: ") + e.what());
    }
  }

  static void check_count(std::size_t got, std::size_t want) {
    if (got != want) {
      throw EmbeddingError("embedding service returned " + std::to_string(got) + " vectors for " +
                           std::to_string(want) + " texts");
    }
  }

  std::string base_url_;
  std::string model_;
  std::string token_;
  mutable std::size_t dim_ = 0;
};

}  // namespace ragner
