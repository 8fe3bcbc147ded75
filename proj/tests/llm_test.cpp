#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <deque>
#include <thread>

#include "support.hpp"

using namespace ragner;
using namespace std::chrono_literals;

namespace {

HttpEndpoint endpoint_at(std::string url) {
  HttpEndpoint e;
  e.url = std::move(url);
  return e;
}

PromptBundle bundle_for(const LabeledSentence& s) {
  PromptComponents c;
  c.base.task_description = "Label tokens.";
  return build_prompt(c, {}, s.tokens);
}

std::string ok_body(const std::string& content) {
  return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump();
}

/// Replays scripted statuses, then answers 200; records peak concurrency.
class ScriptedTransport final : public ChatTransport {
 public:
  explicit ScriptedTransport(std::deque<int> statuses = {}, std::chrono::milliseconds delay = 0ms)
      : statuses_(std::move(statuses)), delay_(delay) {}

  HttpResponse post(const std::string& body) override {
    const int now = ++active_;
    int prev = peak_.load();
    while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(delay_);
    int status = 200;
    {
      std::lock_guard lk(m_);
      ++calls_;
      if (!statuses_.empty()) {
        status = statuses_.front();
        statuses_.pop_front();
      }
    }
    --active_;
    if (status != 200) return {status, "scripted"};
    const auto req = nlohmann::json::parse(body);
    return {200, ok_body("echo:" + req["messages"][1]["content"].get<std::string>())};
  }
  std::string endpoint() const override { return "scripted://"; }

  int calls() const {
    std::lock_guard lk(m_);
    return calls_;
  }
  int peak() const { return peak_.load(); }

 private:
  mutable std::mutex m_;
  std::deque<int> statuses_;
  std::chrono::milliseconds delay_;
  int calls_ = 0;
  std::atomic<int> active_{0}, peak_{0};
};

ClientOptions no_sleep(std::vector<std::chrono::milliseconds>* slept = nullptr, std::size_t cap = 4) {
  ClientOptions o;
  o.max_concurrency = cap;
  o.sleep = [slept](std::chrono::milliseconds d) {
    if (slept) slept->push_back(d);
  };
  return o;
}

}  // namespace

TEST(Params, Presets) {
  const auto g4 = GenerationParams::preset("gpt-4");
  EXPECT_EQ(g4.model_id, "gpt-4");
  EXPECT_DOUBLE_EQ(g4.temperature, 0.2);
  EXPECT_DOUBLE_EQ(g4.top_p, 0.1);
  EXPECT_DOUBLE_EQ(g4.frequency_penalty, 0.0);
  EXPECT_DOUBLE_EQ(g4.presence_penalty, 0.0);
  const auto g35 = GenerationParams::preset("gpt-3.5");
  EXPECT_DOUBLE_EQ(g35.temperature, 0.2);
  EXPECT_DOUBLE_EQ(g35.top_p, 0.1);
  const auto l3 = GenerationParams::preset("llama-3");
  EXPECT_DOUBLE_EQ(l3.temperature, 0.5);
  EXPECT_DOUBLE_EQ(l3.top_p, 0.95);
  EXPECT_EQ(GenerationParams::preset("llama3").model_id, l3.model_id);
  EXPECT_THROW(GenerationParams::preset("claude"), ConfigError);
}

TEST(Params, Validation) {
  auto p = GenerationParams::gpt4();
  EXPECT_NO_THROW(p.validate());
  p.top_p = 0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = GenerationParams::gpt4();
  p.temperature = -1;
  EXPECT_THROW(p.validate(), ConfigError);
  p = GenerationParams::gpt4();
  p.max_output_tokens = 0;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Retry, ExponentialBackoffWithCap) {
  const RetryPolicy p;
  EXPECT_EQ(p.delay_after(1), 1000ms);
  EXPECT_EQ(p.delay_after(2), 2000ms);
  EXPECT_EQ(p.delay_after(4), 8000ms);
  EXPECT_EQ(p.delay_after(7), 60000ms);
  EXPECT_TRUE(ChatClient::retryable(429));
  EXPECT_TRUE(ChatClient::retryable(503));
  EXPECT_TRUE(ChatClient::retryable(0));
  EXPECT_FALSE(ChatClient::retryable(400));
  EXPECT_FALSE(ChatClient::retryable(401));
}

TEST(Client, RequestBody) {
  const auto b = bundle_for(oracle::codeine());
  const auto j = ChatClient::request_body(b, GenerationParams::gpt4());
  EXPECT_EQ(j["model"], "gpt-4");
  EXPECT_EQ(j["messages"][0]["role"], "system");
  EXPECT_EQ(j["messages"][0]["content"], b.system_message);
  EXPECT_EQ(j["messages"][1]["content"], b.user_message);
  EXPECT_EQ(j["max_tokens"], 20);
  EXPECT_EQ(j["n"], 1);
  auto p = GenerationParams::gpt4();
  p.max_output_tokens = 7;
  EXPECT_EQ(ChatClient::request_body(b, p)["max_tokens"], 7);
}

TEST(Client, RetriesTransientFailures) {
  auto t = std::make_shared<ScriptedTransport>(std::deque<int>{503, 429});
  std::vector<std::chrono::milliseconds> slept;
  ChatClient client(t, no_sleep(&slept));
  const auto b = bundle_for(oracle::codeine());
  const auto rec = client.complete(b, GenerationParams::gpt4(), RetryPolicy{});
  EXPECT_EQ(rec.attempt_count, 3);
  EXPECT_EQ(slept, (std::vector<std::chrono::milliseconds>{1000ms, 2000ms}));
  EXPECT_EQ(rec.raw_text, "echo:" + b.user_message);
  EXPECT_EQ(rec.prompt_digest, prompt_digest(b));
  EXPECT_EQ(rec.endpoint, "scripted://");
  EXPECT_EQ(client.network_requests(), 3u);
}

TEST(Client, GivesUpAfterMaxAttempts) {
  auto t = std::make_shared<ScriptedTransport>(std::deque<int>(10, 503));
  std::vector<std::chrono::milliseconds> slept;
  ChatClient client(t, no_sleep(&slept));
  try {
    client.complete(bundle_for(oracle::codeine()), GenerationParams::gpt4(), RetryPolicy{});
    FAIL() << "expected TransportError";
  } catch (const TransportError& e) {
    EXPECT_EQ(e.last_status(), 503);
  }
  EXPECT_EQ(t->calls(), 5);
  EXPECT_EQ(slept.size(), 4u);
}

TEST(Client, NonRetryableStatusFailsFast) {
  auto t = std::make_shared<ScriptedTransport>(std::deque<int>{401});
  ChatClient client(t, no_sleep());
  EXPECT_THROW(client.complete(bundle_for(oracle::codeine()), GenerationParams::gpt4(), RetryPolicy{}), TransportError);
  EXPECT_EQ(t->calls(), 1);
}

TEST(Client, MalformedResponseIsProtocolError) {
  EXPECT_THROW(ChatClient::extract_content("{\"choices\": []}"), ProtocolError);
  EXPECT_THROW(ChatClient::extract_content("not json"), ProtocolError);
  EXPECT_EQ(ChatClient::extract_content(ok_body("hi")), "hi");
}

TEST(Client, ConcurrencyCap) {
  auto t = std::make_shared<ScriptedTransport>(std::deque<int>{}, 20ms);
  ChatClient client(t, no_sleep(nullptr, 3));
  const auto d = oracle::impacts();
  std::vector<std::thread> threads;
  for (int i = 0; i < 12; ++i) {
    threads.emplace_back([&, i] { client.complete(bundle_for(d.test[i]), GenerationParams::gpt4(), RetryPolicy{}); });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(t->calls(), 12);
  EXPECT_LE(t->peak(), 3);
  EXPECT_GE(t->peak(), 2);
}

TEST(Client, DeduplicatesInFlightPrompts) {
  auto t = std::make_shared<ScriptedTransport>(std::deque<int>{}, 50ms);
  ChatClient client(t, no_sleep());
  const auto b = bundle_for(oracle::codeine());
  std::vector<std::thread> threads;
  std::vector<std::string> out(8);
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&, i] { out[i] = client.complete(b, GenerationParams::gpt4(), RetryPolicy{}).raw_text; });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(t->calls(), 1);
  for (const auto& s : out) EXPECT_EQ(s, out[0]);
}

TEST(Client, CacheServesRepeatsWithoutNetwork) {
  const auto dir = oracle::temp_dir("llm-cache");
  auto t = std::make_shared<ScriptedTransport>();
  const auto b = bundle_for(oracle::codeine());
  {
    auto opts = no_sleep();
    opts.cache = std::make_shared<CompletionCache>(dir);
    ChatClient client(t, opts);
    EXPECT_FALSE(client.complete(b, GenerationParams::gpt4(), RetryPolicy{}).from_cache);
    EXPECT_TRUE(client.complete(b, GenerationParams::gpt4(), RetryPolicy{}).from_cache);
    EXPECT_EQ(client.network_requests(), 1u);
  }
  auto opts = no_sleep();
  opts.cache = std::make_shared<CompletionCache>(dir);
  ChatClient warm(t, opts);
  const auto rec = warm.complete(b, GenerationParams::gpt4(), RetryPolicy{});
  EXPECT_TRUE(rec.from_cache);
  EXPECT_EQ(rec.raw_text, "echo:" + b.user_message);
  EXPECT_EQ(warm.network_requests(), 0u);
  // Different sampling parameters are a different cache entry.
  warm.complete(b, GenerationParams::llama3(), RetryPolicy{});
  EXPECT_EQ(warm.network_requests(), 1u);
}

TEST(Client, CacheIgnoresTornEntries) {
  const auto dir = oracle::temp_dir("llm-cache-torn");
  CompletionCache cache(dir);
  std::ofstream(dir / "k.json") << "{\"raw_text\": \"trunc";
  EXPECT_FALSE(cache.get("k"));
  cache.put("k", {{"raw_text", "x"}});
  EXPECT_EQ(cache.get("k")->at("raw_text"), "x");
}

TEST(Http, RealServerWithRetriesAndAuth) {
  httplib::Server server;
  std::atomic<int> hits{0};
  std::string auth;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    if (++hits <= 2) {
      res.status = 500;
      return;
    }
    auth = req.get_header_value("Authorization");
    res.set_content(ok_body("['I-O']"), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  auto endpoint = endpoint_at("http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions");
  endpoint.api_key = "sk-test";
  auto transport = std::make_shared<HttpChatTransport>(endpoint);
  ChatClient client(transport, no_sleep());
  const auto rec = client.complete(bundle_for(oracle::codeine()), GenerationParams::gpt4(), RetryPolicy{});
  EXPECT_EQ(rec.raw_text, "['I-O']");
  EXPECT_EQ(rec.attempt_count, 3);
  EXPECT_EQ(auth, "Bearer sk-test");

  server.stop();
  th.join();
}

TEST(Http, ConnectionFailureRetriesThenFails) {
  auto transport = std::make_shared<HttpChatTransport>(endpoint_at("http://127.0.0.1:1"));
  ChatClient client(transport, no_sleep());
  RetryPolicy p;
  p.max_attempts = 2;
  try {
    client.complete(bundle_for(oracle::codeine()), GenerationParams::gpt4(), p);
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_EQ(e.last_status(), 0);
  }
  EXPECT_EQ(client.network_requests(), 2u);
  EXPECT_THROW(HttpChatTransport(endpoint_at("localhost:8080")), ConfigError);
}

TEST(Http, EndpointFromEnvironment) {
  ::setenv("RAGNER_ENDPOINT", "http://example.invalid/v1/chat/completions", 1);
  ::setenv("RAGNER_API_KEY", "k1", 1);
  ::setenv("RAGNER_API_KEY_HEADER", "api-key", 1);
  const auto ep = endpoint_from_env();
  EXPECT_EQ(ep.url, "http://example.invalid/v1/chat/completions");
  EXPECT_EQ(ep.api_key, "k1");
  EXPECT_EQ(ep.api_key_header, "api-key");
  EXPECT_EQ(endpoint_from_env(endpoint_at("http://explicit")).url, "http://explicit");
  ::unsetenv("RAGNER_ENDPOINT");
  ::unsetenv("RAGNER_API_KEY");
  ::unsetenv("RAGNER_API_KEY_HEADER");
}

TEST(Mock, GoldEchoOverTheWire) {
  const auto q = oracle::codeine();
  const auto alphabet = LabelAlphabet::from_types(std::vector<std::string>{"Clinical_Impacts", "Social_Impacts"});
  auto llm = std::make_shared<MockLlm>(MockBehavior{}, alphabet);
  const auto b = bundle_for(q);
  llm->register_gold(prompt_digest(b), q.tokens, q.labels);
  ChatClient client(std::make_shared<MockTransport>(llm), no_sleep());
  const auto rec = client.complete(b, GenerationParams::gpt4(), RetryPolicy{});
  EXPECT_EQ(rec.raw_text, "['I-O', 'was-O', 'a-O', 'codeine-B-Clinical_Impacts', 'addict.-I-Clinical_Impacts']");
  EXPECT_EQ(rec.endpoint, "mock://gold_echo");
  EXPECT_EQ(parse_response(rec.raw_text, q.tokens, alphabet).labels, q.labels);
}

TEST(Mock, UnknownPromptAndInjectedFailure) {
  const auto q = oracle::codeine();
  const auto alphabet = LabelAlphabet::from_types(std::vector<std::string>{"Clinical_Impacts"});
  auto llm = std::make_shared<MockLlm>(MockBehavior{}, alphabet);
  auto transport = std::make_shared<MockTransport>(llm);
  ChatClient client(transport, no_sleep());
  const auto b = bundle_for(q);
  EXPECT_THROW(client.complete(b, GenerationParams::gpt4(), RetryPolicy{}), TransportError);  // 404
  llm->register_gold(prompt_digest(b), q.tokens, q.labels);
  transport->fail_digest(prompt_digest(b));
  try {
    client.complete(b, GenerationParams::gpt4(), RetryPolicy{});
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_EQ(e.last_status(), 503);
  }
}

TEST(Mock, FixtureBehavior) {
  const auto q = oracle::codeine();
  const auto b = bundle_for(q);
  MockBehavior beh;
  beh.kind = MockKind::fixture;
  beh.fixture[prompt_digest(b)] = "['canned']";
  MockLlm llm(beh, LabelAlphabet{});
  EXPECT_EQ(llm.complete(b).raw_text, "['canned']");
  EXPECT_THROW(llm.respond("0000"), ConfigError);
  EXPECT_EQ(mock_kind_from_string("corrupt"), MockKind::corrupt);
  EXPECT_THROW(mock_kind_from_string("random"), ConfigError);
  MockBehavior bad;
  bad.rate = 1.5;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Corrupt, RateExtremesAndDeterminism) {
  const auto d = oracle::impacts();
  const auto a = LabelAlphabet::from_types(d.entity_types);
  const auto& gold = d.test[5].labels;
  EXPECT_EQ(corrupt_labels(gold, a, 0.0, 1), gold);
  const auto all = corrupt_labels(gold, a, 1.0, 1);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    EXPECT_NE(all[i], gold[i]);
    EXPECT_TRUE(a.contains(all[i]));
  }
  EXPECT_EQ(corrupt_labels(gold, a, 0.5, 9), corrupt_labels(gold, a, 0.5, 9));
}

TEST(Corrupt, ObservedRateNearNominal) {
  const auto a = LabelAlphabet::from_types(std::vector<std::string>{"A", "B"});
  const std::vector<std::string> gold(20000, "O");
  const auto out = corrupt_labels(gold, a, 0.3, 1234);
  const auto changed = std::count_if(out.begin(), out.end(), [](const std::string& l) { return l != "O"; });
  EXPECT_NEAR(static_cast<double>(changed) / 20000.0, 0.3, 0.015);
}
