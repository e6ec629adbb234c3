#include <doctest.h>

#include <map>
#include <set>

#include "cxgame/engine.hpp"
#include "support.hpp"

using namespace cxgame;
using namespace std::chrono_literals;

namespace {

RetryPolicy fast_policy() {
  RetryPolicy p;
  p.base_backoff_ms = 1;
  p.max_backoff_ms = 1;
  return p;
}

struct Harness {
  cxtest::TempDir dir;
  PromptLibrary prompts = PromptLibrary::embedded();
  ProviderRegistry providers{fast_policy()};
  std::unique_ptr<JsonlAppender> events;
  std::shared_ptr<MockBackend> mock;
  Concept concept_{"game", "game", PartOfSpeech::noun, "A game is an activity done for fun."};

  explicit Harness(std::shared_ptr<MockBackend> backend) : mock(std::move(backend)) {
    providers.add("m", mock);
    events = std::make_unique<JsonlAppender>(dir / "events.jsonl");
  }

  EngineContext context() {
    return EngineContext{prompts, providers, *events, GenerationSettings{}, 120000ms,
                         cxtest::fixed_clock, dir / "chains"};
  }

  ChainState fresh(Condition condition) {
    ModelSchedule s;
    s.model_ids = {"m"};
    std::filesystem::create_directories(dir / "chains");
    return ChainState::fresh("chain-x", concept_, condition, 0, s);
  }
};

MockBackend::Responder echo_responder() {
  return [](const CompletionRequest& r) {
    const auto tag = RequestTag::parse(r.request_tag);
    return tag.kind + " text " + std::to_string(tag.index);
  };
}

}  // namespace

TEST_CASE("a chain appends one CE and one repair per step") {
  Harness h(MockBackend::with_responder(echo_responder()));
  auto ctx = h.context();
  const auto chain = run_chain(h.fresh(Condition::memoryless), h.concept_, 5, ctx);
  CHECK(chain.status == ChainStatus::complete);
  REQUIRE(chain.steps.size() == 5);
  REQUIRE(chain.analyses.size() == 6);
  CHECK(chain.analyses[0] == h.concept_.seed_analysis);
  for (int i = 0; i < 5; ++i) {
    CHECK(chain.steps[i].step_index == i);
    CHECK(chain.steps[i].ce_text == "ce text " + std::to_string(i));
    CHECK(chain.analyses[i + 1] == chain.steps[i].repair_text);
    CHECK(chain.steps[i].ce_template_id == "ce.v1");
    CHECK(chain.steps[i].ce_ts == cxtest::fixed_clock());
  }
  CHECK(validate_chain(chain, h.concept_).empty());
  CHECK(h.mock->calls() == 10);
  CHECK(h.events->lines_written() == 10);
  CHECK(read_json_file(h.dir / "chains" / "chain-x.json").get<Chain>() == chain);
}

TEST_CASE("repair prompt sees the analysis the CE was aimed at") {
  Harness h(MockBackend::with_responder(echo_responder()));
  auto ctx = h.context();
  run_chain(h.fresh(Condition::memoryless), h.concept_, 3, ctx);
  const auto reqs = h.mock->requests();
  REQUIRE(reqs.size() == 6);
  CHECK(reqs[1].user_text.find("ce text 0") != std::string::npos);
  CHECK(reqs[2].user_text.find("repair text 0") != std::string::npos);
  CHECK(reqs[3].user_text.find("repair text 0") != std::string::npos);
}

TEST_CASE("history sentinels match the condition") {
  for (auto condition : {Condition::memoryless, Condition::with_history}) {
    Harness h(MockBackend::with_responder(echo_responder()));
    auto ctx = h.context();
    run_chain(h.fresh(condition), h.concept_, 6, ctx);
    for (const auto& r : h.mock->requests()) {
      const auto tag = RequestTag::parse(r.request_tag);
      const std::size_t expected = condition == Condition::with_history ? tag.index : 0;
      CHECK(count_occurrences(r.user_text, kHistoryCeOpen) == expected);
      CHECK(count_occurrences(r.user_text, kHistoryRepairOpen) == expected);
    }
  }
}

TEST_CASE("mixed model selection is deterministic and covers the pool") {
  ModelSchedule s;
  s.mode = ScheduleMode::mixed;
  s.model_ids = {"a", "b", "c"};
  s.rng_seed = 99;
  std::map<std::string, int> counts;
  int same_role = 0;
  for (int i = 0; i < 600; ++i) {
    const auto& ce = select_model(s, i, Role::ce);
    CHECK(ce == select_model(s, i, Role::ce));
    same_role += ce == select_model(s, i, Role::repair);
    ++counts[ce];
  }
  for (const auto& id : s.model_ids) CHECK(counts[id] == doctest::Approx(200).epsilon(0.2));
  // Independent draws agree about a third of the time.
  CHECK(same_role > 120);
  CHECK(same_role < 280);
  s.mode = ScheduleMode::self_play;
  s.model_ids = {"only"};
  CHECK(select_model(s, 17, Role::repair) == "only");
}

TEST_CASE("provider failure marks the chain failed and keeps prior steps") {
  int calls = 0;
  Harness h(MockBackend::with_responder([&](const CompletionRequest& r) -> std::string {
    if (++calls == 6) throw Error(ErrorKind::ProviderRefusal, "content policy");
    return "text for " + r.request_tag;
  }));
  auto ctx = h.context();
  const auto chain = run_chain(h.fresh(Condition::with_history), h.concept_, 5, ctx);
  CHECK(chain.status == ChainStatus::failed);
  CHECK(chain.steps.size() == 2);
  CHECK(chain.error.find("ProviderRefusal") != std::string::npos);
  CHECK(validate_chain(chain).empty());
  const auto log = read_jsonl(h.dir / "events.jsonl");
  REQUIRE_FALSE(log.records.empty());
  CHECK(log.records.back()["kind"] == "failure");
  CHECK(log.records.back()["step_index"] == 2);
  CHECK(read_json_file(h.dir / "chains" / "chain-x.json").get<Chain>().status ==
        ChainStatus::failed);
}

TEST_CASE("slow steps time out") {
  Harness h(MockBackend::with_responder(echo_responder()));
  h.mock->set_latency(30ms);
  auto ctx = h.context();
  ctx.step_timeout = 10ms;
  const auto chain = run_chain(h.fresh(Condition::memoryless), h.concept_, 3, ctx);
  CHECK(chain.status == ChainStatus::failed);
  CHECK(chain.steps.empty());
  CHECK(chain.error.find("StepTimeout") != std::string::npos);
}

TEST_CASE("stepping a finished chain is a precondition violation") {
  Harness h(MockBackend::with_responder(echo_responder()));
  auto ctx = h.context();
  auto state = h.fresh(Condition::memoryless);
  state.chain.status = ChainStatus::complete;
  try {
    step(state, h.concept_, ctx);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::PreconditionViolation);
  }
}

TEST_CASE("interrupted runs resume to the same result as uninterrupted ones") {
  auto config = cxtest::mock_config(2, 2, 4);
  cxtest::TempDir a, b;

  auto reg = build_registry(config);
  const auto full = execute_run(config, *reg, a.path(), RunOptions{2});
  CHECK(full.chains_completed == 8);
  CHECK(full.steps_executed == 32);

  // Second run fails one chain at step 2 on the first attempt.
  const auto plan = plan_run(config);
  const auto victim = plan[3].chain_id;
  bool tripped = false;
  auto synthetic = make_synthetic_responder(config.mock.script);
  auto flaky = MockBackend::with_responder([&](const CompletionRequest& r) {
    const auto tag = RequestTag::parse(r.request_tag);
    if (!tripped && tag.scope == victim && tag.index == 2) {
      tripped = true;
      throw Error(ErrorKind::ProviderRefusal, "transient refusal");
    }
    return synthetic(r);
  });
  ProviderRegistry flaky_reg(config.retry);
  for (const auto& id : config.referenced_models()) flaky_reg.add(id, flaky);
  const auto partial = execute_run(config, flaky_reg, b.path(), RunOptions{1});
  CHECK(partial.chains_failed == 1);
  const auto before_resume = flaky->calls();
  const auto resumed = resume_run(b.path(), flaky_reg, RunOptions{1});
  CHECK(resumed.chains_skipped == 7);
  CHECK(resumed.chains_completed == 8);
  CHECK(resumed.steps_executed == 2);
  CHECK(flaky->calls() - before_resume == 4);

  const auto ca = load_chains(a.path());
  const auto cb = load_chains(b.path());
  REQUIRE(ca.size() == cb.size());
  for (std::size_t i = 0; i < ca.size(); ++i) {
    CHECK(ca[i].analyses == cb[i].analyses);
    CHECK(ca[i].status == cb[i].status);
  }
}

TEST_CASE("resuming a complete run issues no provider calls") {
  auto config = cxtest::mock_config(2, 1, 3);
  cxtest::TempDir dir;
  auto reg = build_registry(config);
  execute_run(config, *reg, dir.path(), RunOptions{2});
  auto counting = MockBackend::with_responder(make_synthetic_responder(config.mock.script));
  ProviderRegistry again;
  for (const auto& id : config.referenced_models()) again.add(id, counting);
  const auto summary = resume_run(dir.path(), again, RunOptions{4});
  CHECK(counting->calls() == 0);
  CHECK(summary.chains_skipped == 4);
  CHECK(summary.steps_executed == 0);
}

TEST_CASE("corrupt chain files stop a resume before any call") {
  auto config = cxtest::mock_config(1, 1, 2);
  cxtest::TempDir dir;
  auto reg = build_registry(config);
  execute_run(config, *reg, dir.path(), RunOptions{1});
  const auto id = plan_run(config).front().chain_id;
  const auto file = RunLayout{dir.path()}.chain_file(id);

  SUBCASE("unparsable file") { write_file_atomic(file, "{ not json"); }
  SUBCASE("broken invariant") {
    auto chain = read_json_file(file).get<Chain>();
    chain.analyses.pop_back();
    write_json_file(file, json(chain));
  }
  auto counting = MockBackend::with_responder(make_synthetic_responder(config.mock.script));
  ProviderRegistry again;
  for (const auto& m : config.referenced_models()) again.add(m, counting);
  try {
    resume_run(dir.path(), again, RunOptions{1});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::CorruptState);
  }
  CHECK(counting->calls() == 0);
}

TEST_CASE("a run directory refuses a different config") {
  auto config = cxtest::mock_config(1, 1, 2);
  cxtest::TempDir dir;
  auto reg = build_registry(config);
  execute_run(config, *reg, dir.path(), RunOptions{1});
  config.iterations = 3;
  try {
    execute_run(config, *reg, dir.path(), RunOptions{1});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ConfigError);
  }
}

TEST_CASE("unregistered models are rejected up front") {
  auto config = cxtest::mock_config(1, 1, 2);
  ProviderRegistry empty;
  cxtest::TempDir dir;
  try {
    execute_run(config, empty, dir.path(), RunOptions{1});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UnknownModel);
  }
  CHECK_FALSE(std::filesystem::exists(dir / "manifest.json"));
}

TEST_CASE("missing manifest is reported as missing input") {
  cxtest::TempDir dir;
  try {
    load_chains(dir.path());
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MissingInputs);
  }
}
