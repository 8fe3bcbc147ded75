#pragma once

// OpenAI-compatible chat-completion client with retries, a concurrency cap,
// in-flight deduplication and a content-addressed response cache.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "ragner/digest.hpp"
#include "ragner/error.hpp"
#include "ragner/prompt.hpp"

namespace ragner {

struct GenerationParams {
  std::string model_id;
  double temperature = 0.0;
  double top_p = 1.0;
  double frequency_penalty = 0.0;
  double presence_penalty = 0.0;
  std::optional<int> max_output_tokens;

  void validate() const {
    auto finite = [](double x) { return std::isfinite(x); };
    if (model_id.empty()) throw ConfigError("generation params: empty model id");
    if (!finite(temperature) || temperature < 0) throw ConfigError("generation params: temperature must be >= 0");
    if (!finite(top_p) || top_p <= 0 || top_p > 1) throw ConfigError("generation params: top_p must be in (0, 1]");
    if (!finite(frequency_penalty) || !finite(presence_penalty)) {
      throw ConfigError("generation params: penalties must be finite");
    }
    if (max_output_tokens && *max_output_tokens <= 0) throw ConfigError("generation params: max_output_tokens <= 0");
  }

  static GenerationParams gpt4() { return {"gpt-4", 0.2, 0.1, 0.0, 0.0, std::nullopt}; }
  static GenerationParams gpt35() { return {"gpt-35-turbo", 0.2, 0.1, 0.0, 0.0, std::nullopt}; }
  static GenerationParams llama3() { return {"Meta-Llama-3-70B-Instruct", 0.5, 0.95, 0.0, 0.0, std::nullopt}; }

  static GenerationParams preset(std::string_view name) {
    if (name == "gpt-4" || name == "gpt4") return gpt4();
    if (name == "gpt-3.5" || name == "gpt35") return gpt35();
    if (name == "llama-3" || name == "llama3") return llama3();
    throw ConfigError("unknown generation preset '" + std::string(name) + "' (gpt-4, gpt-3.5, llama-3)");
  }
};

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds base_delay{1000};
  double multiplier = 2.0;
  std::chrono::milliseconds max_delay{60000};

  /// Delay before attempt `attempt + 1` (attempt counts from 1).
  std::chrono::milliseconds delay_after(int attempt) const {
    double d = static_cast<double>(base_delay.count());
    for (int i = 1; i < attempt; ++i) d *= multiplier;
    d = std::min(d, static_cast<double>(max_delay.count()));
    return std::chrono::milliseconds(static_cast<std::int64_t>(d));
  }
};

struct CompletionRecord {
  std::string prompt_digest;
  std::string raw_text;
  double latency_ms = 0.0;
  int attempt_count = 1;
  std::string endpoint;
  bool from_cache = false;
};

struct HttpResponse {
  int status = 0;  // 0: no response (connection failure)
  std::string body;
};

class ChatTransport {
 public:
  virtual ~ChatTransport() = default;
  virtual HttpResponse post(const std::string& body) = 0;
  /// Identifies the backend; part of every cache key.
  virtual std::string endpoint() const = 0;
};

struct HttpEndpoint {
  /// Full URL of the chat-completions route, e.g.
  /// `https://api.openai.com/v1/chat/completions`.
  std::string url;
  std::string api_key;
  /// "Authorization" sends `Bearer <key>`; any other header sends the raw key
  /// (e.g. "api-key" for Azure deployments).
  std::string api_key_header = "Authorization";
  int timeout_seconds = 120;
};

class HttpChatTransport final : public ChatTransport {
 public:
  explicit HttpChatTransport(HttpEndpoint ep) : ep_(std::move(ep)) {
    const auto scheme_end = ep_.url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint URL needs a scheme: " + ep_.url);
    const auto path_start = ep_.url.find('/', scheme_end + 3);
    origin_ = ep_.url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/v1/chat/completions" : ep_.url.substr(path_start);
  }

  HttpResponse post(const std::string& body) override {
    httplib::Client cli(origin_);
    cli.set_connection_timeout(30, 0);
    cli.set_read_timeout(ep_.timeout_seconds, 0);
    httplib::Headers headers;
    if (!ep_.api_key.empty()) {
      headers.emplace(ep_.api_key_header,
                      ep_.api_key_header == "Authorization" ? "Bearer " + ep_.api_key : ep_.api_key);
    }
    auto res = cli.Post(path_, headers, body, "application/json");
    if (!res) return {0, httplib::to_string(res.error())};
    return {res->status, res->body};
  }

  std::string endpoint() const override { return ep_.url; }

 private:
  HttpEndpoint ep_;
  std::string origin_;
  std::string path_;
};

/// Reads RAGNER_ENDPOINT / RAGNER_API_KEY, falling back to OPENAI_API_KEY.
inline HttpEndpoint endpoint_from_env(HttpEndpoint ep = {}) {
  if (const char* url = std::getenv("RAGNER_ENDPOINT"); url && ep.url.empty()) ep.url = url;
  if (ep.api_key.empty()) {
    if (const char* key = std::getenv("RAGNER_API_KEY")) {
      ep.api_key = key;
    } else if (const char* okey = std::getenv("OPENAI_API_KEY")) {
      ep.api_key = okey;
    }
  }
  if (const char* hdr = std::getenv("RAGNER_API_KEY_HEADER")) ep.api_key_header = hdr;
  return ep;
}

/// Content-addressed JSON files `<dir>/<key>.json`.
class CompletionCache {
 public:
  explicit CompletionCache(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

  std::optional<nlohmann::json> get(const std::string& key) const {
    std::ifstream in(path(key));
    if (!in) return std::nullopt;
    try {
      return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception&) {
      return std::nullopt;  // torn write from an interrupted run
    }
  }

  void put(const std::string& key, const nlohmann::json& value) const {
    const auto final_path = path(key);
    auto tmp = final_path;
    tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    {
      std::ofstream out(tmp);
      if (!out) throw Error("cannot write cache entry " + tmp.string());
      out << value.dump() << '\n';
    }
    std::filesystem::rename(tmp, final_path);
  }

  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::filesystem::path path(const std::string& key) const { return dir_ / (key + ".json"); }
  std::filesystem::path dir_;
};

namespace detail {

class Semaphore {
 public:
  explicit Semaphore(std::size_t n) : free_(n) {}
  void acquire() {
    std::unique_lock lk(m_);
    cv_.wait(lk, [&] { return free_ > 0; });
    --free_;
  }
  void release() {
    {
      std::lock_guard lk(m_);
      ++free_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex m_;
  std::condition_variable cv_;
  std::size_t free_;
};

}  // namespace detail

struct ClientOptions {
  std::size_t max_concurrency = 4;
  std::shared_ptr<CompletionCache> cache;  // null: no caching
  /// Injected for tests; defaults to std::this_thread::sleep_for.
  std::function<void(std::chrono::milliseconds)> sleep;
};

class ChatClient {
 public:
  ChatClient(std::shared_ptr<ChatTransport> transport, ClientOptions opts = {})
      : transport_(std::move(transport)),
        opts_(std::move(opts)),
        slots_(opts_.max_concurrency == 0 ? 1 : opts_.max_concurrency) {
    if (!opts_.sleep) opts_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  }

  /// OpenAI chat-completions request body. max_tokens defaults to four times
  /// the query token count.
  static nlohmann::json request_body(const PromptBundle& bundle, const GenerationParams& params) {
    const int max_tokens =
        params.max_output_tokens.value_or(static_cast<int>(std::max<std::size_t>(1, 4 * bundle.query_token_count)));
    return {{"model", params.model_id},
            {"messages",
             {{{"role", "system"}, {"content", bundle.system_message}},
              {{"role", "user"}, {"content", bundle.user_message}}}},
            {"temperature", params.temperature},
            {"top_p", params.top_p},
            {"frequency_penalty", params.frequency_penalty},
            {"presence_penalty", params.presence_penalty},
            {"max_tokens", max_tokens},
            {"n", 1}};
  }

  std::string cache_key(const PromptBundle& bundle, const GenerationParams& params) const {
    return sha256_hex(transport_->endpoint() + "\n" + request_body(bundle, params).dump());
  }

  CompletionRecord complete(const PromptBundle& bundle, const GenerationParams& params, const RetryPolicy& policy) {
    if (bundle.user_message.empty()) throw Error("complete: empty prompt");
    params.validate();
    const auto key = cache_key(bundle, params);
    const auto digest = prompt_digest(bundle);

    if (opts_.cache) {
      if (auto hit = opts_.cache->get(key)) return from_cache(*hit, digest);
    }

    std::promise<CompletionRecord> promise;
    std::shared_future<CompletionRecord> shared;
    bool owner = false;
    {
      std::lock_guard lk(inflight_m_);
      if (auto it = inflight_.find(key); it != inflight_.end()) {
        shared = it->second;
      } else {
        shared = promise.get_future().share();
        inflight_.emplace(key, shared);
        owner = true;
      }
    }
    if (!owner) return shared.get();

    try {
      auto rec = send(request_body(bundle, params).dump(), policy);
      rec.prompt_digest = digest;
      if (opts_.cache) {
        opts_.cache->put(key, {{"key", key},
                               {"prompt_digest", digest},
                               {"endpoint", rec.endpoint},
                               {"raw_text", rec.raw_text},
                               {"attempt_count", rec.attempt_count},
                               {"latency_ms", rec.latency_ms}});
      }
      promise.set_value(rec);
      erase_inflight(key);
      return rec;
    } catch (...) {
      promise.set_exception(std::current_exception());
      erase_inflight(key);
      throw;
    }
  }

  /// HTTP attempts issued so far (cache hits and deduplicated calls excluded).
  std::size_t network_requests() const noexcept { return requests_.load(); }

  static std::string extract_content(const std::string& body) {
    try {
      const auto j = nlohmann::json::parse(body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ProtocolError(std::string("malformed chat-completion response: ") + e.what());
    }
  }

  static bool retryable(int status) { return status == 0 || status == 408 || status == 429 || status >= 500; }

 private:
  CompletionRecord send(const std::string& body, const RetryPolicy& policy) {
    CompletionRecord rec;
    rec.endpoint = transport_->endpoint();
    const auto t0 = std::chrono::steady_clock::now();
    int last_status = 0;
    const int attempts = std::max(1, policy.max_attempts);
    for (int attempt = 1; attempt <= attempts; ++attempt) {
      HttpResponse res;
      slots_.acquire();
      ++requests_;
      try {
        res = transport_->post(body);
      } catch (...) {
        slots_.release();
        throw;
      }
      slots_.release();
      last_status = res.status;
      if (res.status >= 200 && res.status < 300) {
        rec.raw_text = extract_content(res.body);
        rec.attempt_count = attempt;
        rec.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        return rec;
      }
      if (!retryable(res.status)) {
        throw TransportError("chat endpoint returned HTTP " + std::to_string(res.status) + ": " + res.body.substr(0, 200),
                             res.status);
      }
      if (attempt < attempts) opts_.sleep(policy.delay_after(attempt));
    }
    throw TransportError("chat endpoint failed after " + std::to_string(attempts) + " attempts (last status " +
                             std::to_string(last_status) + ")",
                         last_status);
  }

  static CompletionRecord from_cache(const nlohmann::json& j, const std::string& digest) {
    CompletionRecord rec;
    rec.prompt_digest = digest;
    rec.raw_text = j.value("raw_text", std::string{});
    rec.attempt_count = j.value("attempt_count", 1);
    rec.latency_ms = j.value("latency_ms", 0.0);
    rec.endpoint = j.value("endpoint", std::string{});
    rec.from_cache = true;
    return rec;
  }

  void erase_inflight(const std::string& key) {
    std::lock_guard lk(inflight_m_);
    inflight_.erase(key);
  }

  std::shared_ptr<ChatTransport> transport_;
  ClientOptions opts_;
  detail::Semaphore slots_;
  std::atomic<std::size_t> requests_{0};
  std::mutex inflight_m_;
  std::map<std::string, std::shared_future<CompletionRecord>> inflight_;
};

}  // namespace ragner
