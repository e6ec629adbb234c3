#include "cxgame/provider.hpp"

#include <algorithm>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace cxgame {

std::string prompt_digest(std::string_view template_id, std::string_view system_text,
                          std::string_view user_text) {
  std::string buf;
  buf.reserve(template_id.size() + system_text.size() + user_text.size() + 2);
  buf.append(template_id).push_back('\0');
  buf.append(system_text).push_back('\0');
  buf.append(user_text);
  return sha256_hex(buf);
}

std::string prompt_digest(const CompletionRequest& request) {
  return prompt_digest(request.template_id, request.system_text, request.user_text);
}

std::string RequestTag::str() const { return fmt::format("{}|{}|{}", kind, scope, index); }

RequestTag RequestTag::parse(std::string_view tag) {
  RequestTag out;
  const auto a = tag.find('|');
  if (a == std::string_view::npos) {
    out.kind = std::string(tag);
    return out;
  }
  out.kind = std::string(tag.substr(0, a));
  const auto b = tag.find('|', a + 1);
  if (b == std::string_view::npos) {
    out.scope = std::string(tag.substr(a + 1));
    return out;
  }
  out.scope = std::string(tag.substr(a + 1, b - a - 1));
  try {
    out.index = std::stoi(std::string(tag.substr(b + 1)));
  } catch (const std::exception&) {
    out.index = 0;
  }
  return out;
}

std::vector<std::string> RetryPolicy::violations() const {
  std::vector<std::string> out;
  if (max_attempts < 1) out.emplace_back("max_attempts must be >= 1");
  if (base_backoff_ms <= 0 || max_backoff_ms <= 0) out.emplace_back("backoffs must be positive");
  if (max_backoff_ms < base_backoff_ms) out.emplace_back("max_backoff_ms < base_backoff_ms");
  return out;
}

bool RetryPolicy::is_retryable(ErrorKind kind) const {
  return std::find(retryable.begin(), retryable.end(), kind) != retryable.end();
}

std::chrono::milliseconds RetryPolicy::backoff(int attempt) const {
  long long delay = base_backoff_ms;
  for (int i = 1; i < attempt && delay < max_backoff_ms; ++i) delay *= 2;
  return std::chrono::milliseconds(std::min<long long>(delay, max_backoff_ms));
}

ProviderRegistry::ProviderRegistry(RetryPolicy policy)
    : policy_(std::move(policy)),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {
  if (auto v = policy_.violations(); !v.empty()) {
    throw Error(ErrorKind::ConfigError, "invalid retry policy: " + v.front());
  }
}

void ProviderRegistry::add(const std::string& model_id, std::shared_ptr<Backend> backend,
                           int max_concurrency) {
  if (max_concurrency < 1) {
    throw Error(ErrorKind::ConfigError, "max_concurrency must be >= 1 for " + model_id);
  }
  auto slot = std::make_unique<Slot>();
  slot->backend = std::move(backend);
  slot->max_concurrency = max_concurrency;
  std::lock_guard lock(mutex_);
  slots_[model_id] = std::move(slot);
}

bool ProviderRegistry::has(const std::string& model_id) const {
  std::lock_guard lock(mutex_);
  return slots_.count(model_id) > 0;
}

std::vector<std::string> ProviderRegistry::model_ids() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : slots_) out.push_back(id);
  return out;
}

ProviderRegistry::Slot& ProviderRegistry::slot_for(const std::string& model_id) {
  std::lock_guard lock(mutex_);
  auto it = slots_.find(model_id);
  if (it == slots_.end()) {
    throw Error(ErrorKind::UnknownModel, fmt::format("model '{}' is not registered", model_id));
  }
  return *it->second;
}

CompletionResult ProviderRegistry::complete(const CompletionRequest& request) {
  if (request.user_text.empty()) {
    throw Error(ErrorKind::PreconditionViolation, "completion request with empty user text");
  }
  if (request.max_tokens < 1) {
    throw Error(ErrorKind::PreconditionViolation, "max_tokens must be >= 1");
  }
  Slot& slot = slot_for(request.model_id);

  const auto started = std::chrono::steady_clock::now();
  std::string last_error;
  for (int attempt = 1; attempt <= policy_.max_attempts; ++attempt) {
    {
      std::unique_lock lock(slot.mutex);
      slot.cv.wait(lock, [&] { return slot.in_flight < slot.max_concurrency; });
      ++slot.in_flight;
    }
    struct Release {
      Slot& s;
      ~Release() {
        {
          std::lock_guard lock(s.mutex);
          --s.in_flight;
        }
        s.cv.notify_one();
      }
    };
    try {
      std::string text;
      {
        Release release{slot};
        text = slot.backend->generate(request);
      }
      while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) {
        text.pop_back();
      }
      const auto elapsed = std::chrono::duration<double, std::milli>(
          std::chrono::steady_clock::now() - started);
      spdlog::debug("provider {} tag={} attempt={} ok", request.model_id, request.request_tag,
                    attempt);
      return CompletionResult{std::move(text), request.model_id, elapsed.count(), attempt};
    } catch (const Error& e) {
      spdlog::warn("provider {} tag={} attempt={} failed: {}", request.model_id,
                   request.request_tag, attempt, e.what());
      if (!policy_.is_retryable(e.kind())) throw;
      last_error = e.what();
    }
    if (attempt < policy_.max_attempts) sleeper_(policy_.backoff(attempt));
  }
  throw Error(ErrorKind::RetriesExhausted,
              fmt::format("model '{}' tag '{}' failed after {} attempts: {}", request.model_id,
                          request.request_tag, policy_.max_attempts, last_error));
}

// --- mock ------------------------------------------------------------------

std::shared_ptr<MockBackend> MockBackend::with_digests(std::map<std::string, std::string> m) {
  if (m.empty()) throw Error(ErrorKind::PreconditionViolation, "mock script is empty");
  std::shared_ptr<MockBackend> out(new MockBackend());
  out->by_digest_ = std::move(m);
  return out;
}

std::shared_ptr<MockBackend> MockBackend::with_queue(std::vector<std::string> queue) {
  if (queue.empty()) throw Error(ErrorKind::PreconditionViolation, "mock script is empty");
  std::shared_ptr<MockBackend> out(new MockBackend());
  out->queue_ = std::move(queue);
  return out;
}

std::shared_ptr<MockBackend> MockBackend::with_responder(Responder responder) {
  if (!responder) throw Error(ErrorKind::PreconditionViolation, "mock responder is empty");
  std::shared_ptr<MockBackend> out(new MockBackend());
  out->responder_ = std::move(responder);
  return out;
}

std::string MockBackend::generate(const CompletionRequest& request) {
  std::chrono::milliseconds latency{0};
  {
    std::lock_guard lock(mutex_);
    ++calls_;
    requests_.push_back(request);
    ++in_flight_;
    max_in_flight_ = std::max(max_in_flight_, in_flight_);
    latency = latency_;
  }
  struct Leave {
    MockBackend& m;
    ~Leave() {
      std::lock_guard lock(m.mutex_);
      --m.in_flight_;
    }
  } leave{*this};
  if (latency.count() > 0) std::this_thread::sleep_for(latency);

  Responder responder;
  {
    std::lock_guard lock(mutex_);
    if (fail_remaining_ > 0) {
      --fail_remaining_;
      throw Error(fail_kind_, "injected mock failure");
    }
    if (!by_digest_.empty()) {
      auto it = by_digest_.find(prompt_digest(request));
      if (it == by_digest_.end()) {
        throw Error(ErrorKind::ScriptExhausted,
                    "no scripted response for digest of tag " + request.request_tag);
      }
      return it->second;
    }
    if (!queue_.empty()) {
      const auto scope = RequestTag::parse(request.request_tag).scope;
      auto& cursor = queue_cursor_[scope];
      if (cursor >= queue_.size()) {
        throw Error(ErrorKind::ScriptExhausted, "mock queue exhausted for scope " + scope);
      }
      return queue_[cursor++];
    }
    responder = responder_;
  }
  return responder(request);
}

void MockBackend::fail_next(int count, ErrorKind kind) {
  std::lock_guard lock(mutex_);
  fail_remaining_ = count;
  fail_kind_ = kind;
}

void MockBackend::set_latency(std::chrono::milliseconds latency) {
  std::lock_guard lock(mutex_);
  latency_ = latency;
}

std::size_t MockBackend::calls() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

int MockBackend::max_in_flight() const {
  std::lock_guard lock(mutex_);
  return max_in_flight_;
}

std::vector<CompletionRequest> MockBackend::requests() const {
  std::lock_guard lock(mutex_);
  return requests_;
}

}  // namespace cxgame
