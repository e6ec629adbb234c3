#include <doctest.h>

#include <thread>

#include "cxgame/provider.hpp"
#include "support.hpp"

using namespace cxgame;
using namespace std::chrono_literals;

namespace {

CompletionRequest request(std::string model, std::string tag = "ce|c1|0") {
  CompletionRequest r;
  r.model_id = std::move(model);
  r.system_text = "sys";
  r.user_text = "user";
  r.request_tag = std::move(tag);
  r.template_id = "ce.v1";
  return r;
}

RetryPolicy fast_policy(int attempts) {
  RetryPolicy p;
  p.max_attempts = attempts;
  p.base_backoff_ms = 10;
  p.max_backoff_ms = 40;
  return p;
}

}  // namespace

TEST_CASE("request tags round-trip") {
  const RequestTag t{"judge_ce", "abc", 12};
  CHECK(t.str() == "judge_ce|abc|12");
  const auto p = RequestTag::parse(t.str());
  CHECK(p.kind == "judge_ce");
  CHECK(p.scope == "abc");
  CHECK(p.index == 12);
}

TEST_CASE("prompt digest covers template, system and user text") {
  const auto d = prompt_digest("t", "s", "u");
  CHECK(d.size() == 64);
  CHECK(d == prompt_digest("t", "s", "u"));
  CHECK(d != prompt_digest("t2", "s", "u"));
  CHECK(d != prompt_digest("t", "s2", "u"));
  CHECK(d != prompt_digest("t", "s", "u2"));
  CHECK(prompt_digest("ts", "", "u") != prompt_digest("t", "s", "u"));
}

TEST_CASE("backoff doubles up to the cap") {
  const auto p = fast_policy(5);
  CHECK(p.backoff(1) == 10ms);
  CHECK(p.backoff(2) == 20ms);
  CHECK(p.backoff(3) == 40ms);
  CHECK(p.backoff(4) == 40ms);
  RetryPolicy bad;
  bad.max_attempts = 0;
  CHECK_FALSE(bad.violations().empty());
}

TEST_CASE("transport errors are retried with backoff, then succeed") {
  ProviderRegistry reg(fast_policy(3));
  std::vector<std::chrono::milliseconds> sleeps;
  reg.set_sleeper([&](std::chrono::milliseconds d) { sleeps.push_back(d); });
  auto mock = MockBackend::with_queue({"hello"});
  mock->fail_next(2);
  reg.add("m", mock);
  const auto r = reg.complete(request("m"));
  CHECK(r.text == "hello");
  CHECK(r.attempt_count == 3);
  CHECK(sleeps == std::vector<std::chrono::milliseconds>{10ms, 20ms});
}

TEST_CASE("retries exhausted after max_attempts") {
  ProviderRegistry reg(fast_policy(3));
  reg.set_sleeper([](auto) {});
  auto mock = MockBackend::with_queue({"hello"});
  mock->fail_next(3);
  reg.add("m", mock);
  try {
    reg.complete(request("m"));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::RetriesExhausted);
  }
  CHECK(mock->calls() == 3);
}

TEST_CASE("refusals are not retried") {
  ProviderRegistry reg(fast_policy(3));
  reg.set_sleeper([](auto) {});
  auto mock = MockBackend::with_queue({"hello"});
  mock->fail_next(1, ErrorKind::ProviderRefusal);
  reg.add("m", mock);
  CHECK_THROWS_AS(reg.complete(request("m")), Error);
  CHECK(mock->calls() == 1);
}

TEST_CASE("unknown model and bad requests") {
  ProviderRegistry reg;
  try {
    reg.complete(request("ghost"));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UnknownModel);
  }
  reg.add("m", MockBackend::with_queue({"x"}));
  auto r = request("m");
  r.user_text.clear();
  try {
    reg.complete(r);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::PreconditionViolation);
  }
}

TEST_CASE("per-model concurrency bound holds under load") {
  ProviderRegistry reg;
  auto mock = MockBackend::with_responder([](const CompletionRequest&) { return "ok"; });
  mock->set_latency(5ms);
  reg.add("m", mock, 3);
  {
    std::vector<std::jthread> threads;
    for (int t = 0; t < 12; ++t) {
      threads.emplace_back([&] {
        for (int i = 0; i < 4; ++i) reg.complete(request("m"));
      });
    }
  }
  CHECK(mock->calls() == 48);
  CHECK(mock->max_in_flight() <= 3);
  CHECK(mock->max_in_flight() >= 2);
}

TEST_CASE("mock queues replay per scope and run out") {
  auto mock = MockBackend::with_queue({"one", "two"});
  CHECK(mock->generate(request("m", "ce|a|0")) == "one");
  CHECK(mock->generate(request("m", "ce|a|1")) == "two");
  CHECK(mock->generate(request("m", "ce|b|0")) == "one");
  try {
    mock->generate(request("m", "ce|a|2"));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ScriptExhausted);
  }
}

TEST_CASE("mock digest map answers by prompt digest") {
  const auto r = request("m");
  auto mock = MockBackend::with_digests({{prompt_digest(r), "mapped"}});
  CHECK(mock->generate(r) == "mapped");
  auto other = r;
  other.user_text = "different";
  CHECK_THROWS_AS(mock->generate(other), Error);
  CHECK(mock->requests().size() == 2);
}

TEST_CASE("synthetic responder is deterministic and well-formed") {
  const auto respond = make_synthetic_responder(SyntheticScript{});
  auto r = request("m", "ce|chain|3");
  r.user_text = "Concept: game (noun)\n<analysis>\nA game is fun.\n</analysis>";
  const auto a = respond(r);
  CHECK(a == respond(r));
  CHECK(a.find("game") != std::string::npos);
  CHECK(a.find_first_of("0123456789") == std::string::npos);
  r.request_tag = "judge_ce|chain|3";
  CHECK(respond(r).find("```verdict") != std::string::npos);
  r.request_tag = "unknown|x|0";
  CHECK_THROWS_AS(respond(r), Error);
}

TEST_CASE("synthetic verdict rate tracks the script") {
  SyntheticScript s;
  s.ce_valid_rate = {0.7, 0.2};
  const auto respond = make_synthetic_responder(s);
  int valid0 = 0, valid1 = 0;
  const int n = 2000;
  for (int i = 0; i < n; ++i) {
    CompletionRequest r = request("m");
    r.request_tag = RequestTag{"judge_ce", "chain" + std::to_string(i), 0}.str();
    valid0 += respond(r).find("category: valid") != std::string::npos;
    r.request_tag = RequestTag{"judge_ce", "chain" + std::to_string(i), 5}.str();
    valid1 += respond(r).find("category: valid") != std::string::npos;
  }
  CHECK(valid0 / double(n) == doctest::Approx(0.7).epsilon(0.05));
  CHECK(valid1 / double(n) == doctest::Approx(0.2).epsilon(0.1));
}
