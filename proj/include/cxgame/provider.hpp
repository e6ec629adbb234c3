#pragma once

#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "cxgame/core.hpp"

namespace cxgame {

struct CompletionRequest {
  std::string model_id;
  std::string system_text;
  std::string user_text;
  int max_tokens = 1024;
  double temperature = 0.7;
  // Logged with every attempt. Harness requests use "kind|scope|index"
  // (see RequestTag); the scope keys per-chain mock queues.
  std::string request_tag;
  // Prompt template the texts were rendered from; part of the digest.
  std::string template_id;
};

// sha256 over (template_id, system_text, user_text). Matches the prompt
// digest stored in StepRecord.
std::string prompt_digest(std::string_view template_id, std::string_view system_text,
                          std::string_view user_text);
std::string prompt_digest(const CompletionRequest& request);

struct RequestTag {
  std::string kind;   // ce, repair, judge_ce, judge_analysis, extract, tag
  std::string scope;  // chain id or concept id
  int index = 0;      // step index or position

  std::string str() const;
  static RequestTag parse(std::string_view tag);
};

struct CompletionResult {
  std::string text;
  std::string model_id;
  double latency_ms = 0.0;
  int attempt_count = 1;
};

struct RetryPolicy {
  int max_attempts = 3;
  int base_backoff_ms = 500;
  int max_backoff_ms = 8000;
  std::vector<ErrorKind> retryable{ErrorKind::TransportError};

  std::vector<std::string> violations() const;
  bool is_retryable(ErrorKind kind) const;
  // Delay before attempt `attempt + 1`, attempt counted from 1.
  std::chrono::milliseconds backoff(int attempt) const;
};

// One generation attempt against a backend. Throws Error with kind
// TransportError (retryable), ProviderRefusal or ScriptExhausted.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string generate(const CompletionRequest& request) = 0;
};

// Thread-safe model registry with per-model in-flight bounds and retries.
class ProviderRegistry {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit ProviderRegistry(RetryPolicy policy = {});

  void add(const std::string& model_id, std::shared_ptr<Backend> backend,
           int max_concurrency = 8);
  bool has(const std::string& model_id) const;
  std::vector<std::string> model_ids() const;

  CompletionResult complete(const CompletionRequest& request);

  const RetryPolicy& retry_policy() const { return policy_; }
  void set_sleeper(Sleeper sleeper) { sleeper_ = std::move(sleeper); }

 private:
  struct Slot {
    std::shared_ptr<Backend> backend;
    int max_concurrency = 8;
    int in_flight = 0;
    std::mutex mutex;
    std::condition_variable cv;
  };

  Slot& slot_for(const std::string& model_id);

  RetryPolicy policy_;
  Sleeper sleeper_;
  mutable std::mutex mutex_;
  std::map<std::string, std::unique_ptr<Slot>> slots_;
};

// Deterministic scripted backend for offline runs and tests.
//
// Responses come from, in order of precedence: a digest-keyed map, per-scope
// queues (every scope replays the same queue from the start), or a responder
// function. Failure injection and call counting support retry and
// concurrency tests.
class MockBackend : public Backend {
 public:
  using Responder = std::function<std::string(const CompletionRequest&)>;

  static std::shared_ptr<MockBackend> with_digests(std::map<std::string, std::string> by_digest);
  static std::shared_ptr<MockBackend> with_queue(std::vector<std::string> queue);
  static std::shared_ptr<MockBackend> with_responder(Responder responder);

  std::string generate(const CompletionRequest& request) override;

  // The next `count` calls fail with `kind` before reaching the script.
  void fail_next(int count, ErrorKind kind = ErrorKind::TransportError);
  // Artificial latency per call, to make concurrency observable.
  void set_latency(std::chrono::milliseconds latency);

  std::size_t calls() const;
  int max_in_flight() const;
  std::vector<CompletionRequest> requests() const;

 private:
  MockBackend() = default;

  mutable std::mutex mutex_;
  std::map<std::string, std::string> by_digest_;
  std::vector<std::string> queue_;
  std::map<std::string, std::size_t> queue_cursor_;
  Responder responder_;
  int fail_remaining_ = 0;
  ErrorKind fail_kind_ = ErrorKind::TransportError;
  std::chrono::milliseconds latency_{0};
  std::size_t calls_ = 0;
  int in_flight_ = 0;
  int max_in_flight_ = 0;
  std::vector<CompletionRequest> requests_;
};

// Knobs for the synthetic offline responder (config section [mock]).
struct SyntheticScript {
  std::uint64_t seed = 1;
  // Probability that a judged CE is valid, by step index; the last entry
  // extends to later positions.
  std::vector<double> ce_valid_rate{0.69, 0.46, 0.46, 0.35, 0.3, 0.24, 0.22, 0.2, 0.2, 0.2};
  int subconcept_count = 14;
  double presence_rate = 0.55;
};

// Answers every request kind the harness issues (ce, repair, judge_ce,
// judge_analysis, extract, tag) with well-formed, deterministic text that
// depends only on the request and the script.
MockBackend::Responder make_synthetic_responder(SyntheticScript script);

enum class HttpAdapter { openai, anthropic };

std::optional<HttpAdapter> parse_http_adapter(std::string_view name);

struct HttpEndpoint {
  HttpAdapter adapter = HttpAdapter::openai;
  std::string url;          // full URL including path
  std::string remote_model; // model name sent upstream
  std::string api_key_env;  // variable holding the credential; may be empty
  std::chrono::milliseconds timeout{120000};
};

// Builds the upstream request body for the adapter.
json build_http_body(const HttpEndpoint& endpoint, const CompletionRequest& request);
// Extracts generated text from an upstream response body.
std::string parse_http_response(HttpAdapter adapter, const json& body);

class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpEndpoint endpoint);
  std::string generate(const CompletionRequest& request) override;

 private:
  HttpEndpoint endpoint_;
};

}  // namespace cxgame
