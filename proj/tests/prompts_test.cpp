#include <doctest.h>

#include "cxgame/engine.hpp"
#include "cxgame/prompts.hpp"
#include "support.hpp"

using namespace cxgame;

TEST_CASE("substitution is single-pass") {
  const PromptVars vars{{"a", "{{b}}"}, {"b", "B"}};
  CHECK(substitute("x {{a}} y", vars) == "x {{b}} y");
  CHECK(substitute("no placeholders", vars) == "no placeholders");
  CHECK_THROWS_AS(substitute("{{missing}}", vars), Error);
}

TEST_CASE("template files parse into system and user parts") {
  const auto t = PromptLibrary::parse("id: demo.v2\n--- system\nS {{x}}\n--- user\nU {{y}}\n");
  CHECK(t.id == "demo.v2");
  CHECK(t.system.find("S {{x}}") != std::string::npos);
  CHECK(t.user.find("U {{y}}") != std::string::npos);
  CHECK_THROWS_AS(PromptLibrary::parse("no header"), Error);
}

TEST_CASE("logical names resolve to the highest version") {
  auto lib = PromptLibrary::embedded();
  CHECK(lib.get("ce").id == "ce.v1");
  lib.add(PromptLibrary::parse("id: ce.v2\n--- system\nnew\n--- user\n{{analysis}}\n"));
  CHECK(lib.get("ce").id == "ce.v2");
  CHECK(lib.get("ce.v1").id == "ce.v1");
  CHECK_THROWS_AS(lib.get("nonexistent"), Error);
}

TEST_CASE("embedded library matches the prompts directory") {
  const auto embedded = PromptLibrary::embedded();
  const auto from_dir = PromptLibrary::with_overrides(cxtest::source_dir() / "prompts");
  CHECK(embedded.fingerprints() == from_dir.fingerprints());
  for (const char* name : {"ce", "repair", "judge_ce", "judge_analysis", "extract_subconcepts",
                           "tag_definition", "format_reminder"}) {
    CHECK_NOTHROW(embedded.get(name));
  }
}

TEST_CASE("rendered digests change with content") {
  const auto lib = PromptLibrary::embedded();
  const Concept k{"game", "game", PartOfSpeech::noun, "A game is fun."};
  const auto a = build_ce_prompt(lib, k, "A game is fun.", {}, Condition::memoryless);
  const auto b = build_ce_prompt(lib, k, "A game is fun and has rules.", {}, Condition::memoryless);
  CHECK(a.template_id == "ce.v1");
  CHECK(a.user.find("Concept: game (noun)") != std::string::npos);
  CHECK(a.digest() != b.digest());
  CHECK(a.digest() == build_ce_prompt(lib, k, "A game is fun.", {}, Condition::memoryless).digest());
}

TEST_CASE("history appears only in with-history prompts") {
  const auto lib = PromptLibrary::embedded();
  const Concept k{"game", "game", PartOfSpeech::noun, "A game is fun."};
  std::vector<StepRecord> history(2);
  for (int i = 0; i < 2; ++i) {
    history[i].step_index = i;
    history[i].ce_text = "ce " + std::to_string(i);
    history[i].repair_text = "repair " + std::to_string(i);
  }
  const auto with = build_repair_prompt(lib, k, "A game is fun.", "a ce", history,
                                        Condition::with_history);
  CHECK(count_occurrences(with.user, kHistoryCeOpen) == 2);
  CHECK(count_occurrences(with.user, kHistoryRepairOpen) == 2);
  const auto without = build_repair_prompt(lib, k, "A game is fun.", "a ce", {},
                                           Condition::memoryless);
  CHECK(count_occurrences(without.user, kHistoryCeOpen) == 0);
  try {
    build_ce_prompt(lib, k, "A game is fun.", history, Condition::memoryless);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::PreconditionViolation);
  }
  CHECK_THROWS_AS(build_repair_prompt(lib, k, "A game is fun.", "", {}, Condition::memoryless),
                  Error);
}

TEST_CASE("count_occurrences") {
  CHECK(count_occurrences("aaaa", "aa") == 2);
  CHECK(count_occurrences("abc", "") == 0);
  CHECK(count_occurrences("abcabc", "bc") == 2);
}
