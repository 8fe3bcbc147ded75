#pragma once

// Deterministic offline stand-in for a chat-completion endpoint.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ragner/digest.hpp"
#include "ragner/error.hpp"
#include "ragner/llm.hpp"
#include "ragner/parse.hpp"
#include "ragner/prompt.hpp"
#include "ragner/rng.hpp"

namespace ragner {

enum class MockKind { gold_echo, corrupt, fixture };

inline std::string_view to_string(MockKind k) {
  switch (k) {
    case MockKind::gold_echo: return "gold_echo";
    case MockKind::corrupt: return "corrupt";
    case MockKind::fixture: return "fixture";
  }
  return "gold_echo";
}

inline MockKind mock_kind_from_string(std::string_view s) {
  if (s == "gold_echo") return MockKind::gold_echo;
  if (s == "corrupt") return MockKind::corrupt;
  if (s == "fixture") return MockKind::fixture;
  throw ConfigError("unknown mock behavior '" + std::string(s) + "' (gold_echo, corrupt, fixture)");
}

struct MockBehavior {
  MockKind kind = MockKind::gold_echo;
  double rate = 0.0;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> fixture;  // prompt digest -> response

  void validate() const {
    if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("mock corrupt rate must be in [0, 1]");
  }

  std::string endpoint() const {
    std::ostringstream os;
    os << "mock://" << to_string(kind);
    if (kind == MockKind::corrupt) os << "?rate=" << rate << "&seed=" << seed;
    return os.str();
  }
};

/// Replaces each label, with probability `rate`, by a different label drawn
/// uniformly from the alphabet's BIO labels. One uniform draw per token, then
/// one index draw per corrupted token, all from mt19937_64(seed).
inline std::vector<std::string> corrupt_labels(const std::vector<std::string>& gold, const LabelAlphabet& alphabet,
                                               double rate, std::uint64_t seed) {
  const auto labels = alphabet.bio_labels();
  Rng rng(seed);
  std::vector<std::string> out = gold;
  for (auto& l : out) {
    const double u = uniform_unit(rng);
    if (u >= rate || labels.size() < 2) continue;
    std::vector<const std::string*> others;
    for (const auto& c : labels) {
      if (c != l) others.push_back(&c);
    }
    l = *others[uniform_below(rng, others.size())];
  }
  return out;
}

class MockLlm {
 public:
  MockLlm(MockBehavior behavior, LabelAlphabet alphabet) : behavior_(std::move(behavior)), alphabet_(std::move(alphabet)) {
    behavior_.validate();
  }

  const MockBehavior& behavior() const noexcept { return behavior_; }

  /// Out-of-band gold labels for the prompt with this digest.
  void register_gold(const std::string& digest, std::vector<Token> tokens, std::vector<std::string> labels) {
    std::lock_guard lk(m_);
    gold_[digest] = {std::move(tokens), std::move(labels)};
  }

  /// Labels the mock will emit for a registered prompt.
  std::vector<std::string> emitted_labels(const std::string& digest) const {
    const auto& g = lookup(digest);
    if (behavior_.kind != MockKind::corrupt) return g.labels;
    return corrupt_labels(g.labels, alphabet_, behavior_.rate, mix_seed(behavior_.seed, digest_to_u64(digest)));
  }

  std::string respond(const std::string& digest) const {
    if (behavior_.kind == MockKind::fixture) {
      auto it = behavior_.fixture.find(digest);
      if (it == behavior_.fixture.end()) throw ConfigError("mock fixture has no response for prompt " + digest);
      return it->second;
    }
    const auto labels = emitted_labels(digest);
    return render_labeled_output(lookup(digest).tokens, labels);
  }

  CompletionRecord complete(const PromptBundle& bundle) const {
    CompletionRecord rec;
    rec.prompt_digest = prompt_digest(bundle);
    rec.raw_text = respond(rec.prompt_digest);
    rec.endpoint = behavior_.endpoint();
    return rec;
  }

 private:
  struct Gold {
    std::vector<Token> tokens;
    std::vector<std::string> labels;
  };

  const Gold& lookup(const std::string& digest) const {
    std::lock_guard lk(m_);
    auto it = gold_.find(digest);
    if (it == gold_.end()) throw ConfigError("mock has no gold labels registered for prompt " + digest);
    return it->second;
  }

  MockBehavior behavior_;
  LabelAlphabet alphabet_;
  mutable std::mutex m_;
  std::map<std::string, Gold> gold_;
};

/// Serves MockLlm over the chat-completions wire format so the full client
/// path (request body, response extraction, cache) is exercised offline.
class MockTransport final : public ChatTransport {
 public:
  explicit MockTransport(std::shared_ptr<const MockLlm> llm) : llm_(std::move(llm)) {}

  /// Prompts with these digests answer HTTP 503 on every attempt.
  void fail_digest(const std::string& digest) {
    std::lock_guard lk(m_);
    failing_.insert(digest);
  }

  HttpResponse post(const std::string& body) override {
    nlohmann::json req;
    try {
      req = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      return {400, e.what()};
    }
    std::string system, user;
    for (const auto& m : req.value("messages", nlohmann::json::array())) {
      const auto role = m.value("role", std::string{});
      if (role == "system") system = m.value("content", std::string{});
      if (role == "user") user = m.value("content", std::string{});
    }
    const auto digest = prompt_digest(system, user);
    {
      std::lock_guard lk(m_);
      if (failing_.contains(digest)) return {503, "injected failure"};
    }
    std::string text;
    try {
      text = llm_->respond(digest);
    } catch (const Error& e) {
      return {404, e.what()};
    }
    const nlohmann::json res = {
        {"object", "chat.completion"},
        {"model", req.value("model", std::string{})},
        {"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", text}}}, {"finish_reason", "stop"}}}}};
    return {200, res.dump()};
  }

  std::string endpoint() const override { return llm_->behavior().endpoint(); }

 private:
  std::shared_ptr<const MockLlm> llm_;
  std::mutex m_;
  std::set<std::string> failing_;
};

}  // namespace ragner
