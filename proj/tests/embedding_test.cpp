#include <gtest/gtest.h>

#include <thread>

#include "support.hpp"

using namespace ragner;

namespace {

/// Embedding service on an ephemeral localhost port for the test's lifetime.
class EmbedServer {
 public:
  explicit EmbedServer(std::shared_ptr<EmbeddingProvider> provider) {
    mount_embed_service(server_, std::move(provider));
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~EmbedServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST(Fallback, UnitNormAndDeterministic) {
  for (const char* t : {"codeine", "x", "B-cell", "--", "ÄÖ"}) {
    const auto v = fallback_embed_token(t);
    EXPECT_EQ(v.dim(), kFallbackDim);
    EXPECT_NEAR(norm(v), 1.0, 1e-12) << t;
    EXPECT_EQ(v, fallback_embed_token(t));
  }
  EXPECT_EQ(fallback_embed_token("Codeine"), fallback_embed_token("codeine"));
  EXPECT_NE(fallback_embed_token("codeine"), fallback_embed_token("heroin"));
  const auto s = fallback_embed_sentence({"i", "was", "sick"}, 32);
  EXPECT_EQ(s.dim(), 32u);
  EXPECT_NEAR(norm(s), 1.0, 1e-12);
  EXPECT_THROW(fallback_embed_tokens({}), EmbeddingError);
}

TEST(Schema, ServeRequestShapes) {
  HashingEmbedder emb(16);
  const auto sent = serve_embed_request(emb, make_embed_request({{"a", "b"}, {"c"}}, Granularity::sentence,
                                                                EmbedRole::query, emb.model_id()));
  EXPECT_EQ(sent["dim"], 16);
  EXPECT_EQ(sent["model"], emb.model_id());
  ASSERT_EQ(sent["vectors"].size(), 2u);
  EXPECT_EQ(sent["vectors"][0].size(), 16u);

  const auto tok = serve_embed_request(emb, make_embed_request({{"a", "b", "c"}}, Granularity::token,
                                                               EmbedRole::document, emb.model_id()));
  EXPECT_EQ(tok["vectors"][0].size(), 3u);
  EXPECT_EQ(tok["vectors"][0][0].size(), 16u);

  // A plain string is whitespace-split into the same tokens.
  const auto str = serve_embed_request(emb, {{"texts", {"a b"}}});
  EXPECT_EQ(str["vectors"][0], sent["vectors"][0]);
}

TEST(Schema, MalformedRequests) {
  HashingEmbedder emb(16);
  auto status_of = [&](const nlohmann::json& req) {
    try {
      serve_embed_request(emb, req);
    } catch (const EmbeddingError& e) {
      return e.status();
    }
    return 200;
  };
  EXPECT_EQ(status_of({{"texts", nlohmann::json::array()}}), 400);
  EXPECT_EQ(status_of({{"texts", {{"a"}}}, {"model", "other"}}), 404);
  EXPECT_EQ(status_of({{"texts", {{"a"}}}, {"granularity", "word"}}), 400);
  EXPECT_EQ(status_of({{"texts", {{"a"}}}, {"role", "boss"}}), 400);
  EXPECT_EQ(status_of({{"texts", {"a b"}}, {"granularity", "token"}}), 400);
  EXPECT_EQ(status_of({{"texts", {1}}}), 400);
  EXPECT_EQ(status_of({{"texts", {"   "}}}), 400);
}

TEST(Http, ClientMatchesLocalProvider) {
  auto local = std::make_shared<HashingEmbedder>(16);
  EmbedServer server(local);
  HttpEmbedder remote(server.url(), local->model_id());
  EXPECT_EQ(remote.dim(), 16u);
  const TokenLists texts{{"I", "was", "sick"}, {"jail"}};
  EXPECT_EQ(remote.embed_sentences(texts, EmbedRole::symmetric), local->embed_sentences(texts, EmbedRole::symmetric));
  EXPECT_EQ(remote.embed_tokens(texts, EmbedRole::symmetric), local->embed_tokens(texts, EmbedRole::symmetric));

  // An index built over HTTP ranks exactly like one built locally.
  const auto d = oracle::impacts();
  for (auto kind : {EngineKind::dense, EngineKind::late_interaction, EngineKind::dual_encoder}) {
    const auto a = Index::build(d.train, kind, &remote);
    const auto b = Index::build(d.train, kind, local.get());
    EXPECT_EQ(a.retrieve(d.test[2].token_texts(), 5, &remote), b.retrieve(d.test[2].token_texts(), 5, local.get()));
  }
}

TEST(Http, Errors) {
  auto local = std::make_shared<HashingEmbedder>(16);
  EmbedServer server(local);
  HttpEmbedder wrong_model(server.url(), "no-such-model");
  try {
    wrong_model.embed_sentences({{"a"}}, EmbedRole::query);
    FAIL() << "expected EmbeddingError";
  } catch (const EmbeddingError& e) {
    EXPECT_EQ(e.status(), 404);
  }
  httplib::Client cli(server.url());
  auto res = cli.Post("/embed", "{not json", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(cli.Get("/healthz")->body, "ok");

  HttpEmbedder unreachable("http://127.0.0.1:1", "m");
  EXPECT_THROW(unreachable.embed_sentences({{"a"}}, EmbedRole::query), EmbeddingError);
}
