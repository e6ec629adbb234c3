#include <doctest.h>

#include <set>

#include "cxgame/annotation.hpp"
#include "support.hpp"

using namespace cxgame;

namespace {

// 10 concepts x 2 conditions x 3 chains, 6 steps each.
struct Corpus {
  RunConfig config = cxtest::mock_config(10, 3, 6);
  cxtest::TempDir run;
  std::vector<Chain> chains;

  Corpus() {
    auto reg = build_registry(config);
    execute_run(config, *reg, run.path(), RunOptions{8});
    chains = load_chains(run.path());
  }
};

Corpus& corpus() {
  static Corpus c;
  return c;
}

ExportRequest three_strata_request(std::uint64_t seed = 11) {
  ExportRequest r;
  r.set_id = "human_eval";
  r.step_indices = {1, 3, 5};
  r.per_stratum = 10;
  r.seed = seed;
  r.condition = Condition::memoryless;
  return r;
}

RatingResponse response(const std::string& id, VerdictCategory c, int importance) {
  RatingResponse r;
  r.public_id = id;
  r.category = c;
  r.importance = importance;
  return r;
}

ErrorKind error_kind(auto fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::InvariantViolation;
}

}  // namespace

TEST_CASE("export samples per stratum and hides identities") {
  auto& c = corpus();
  const auto set = build_annotation_set(c.chains, c.config.concepts, three_strata_request());
  REQUIRE(set.items.size() == 30);
  CHECK(set.mapping.size() == 30);
  std::map<int, int> per_step;
  std::set<HiddenIdentity> seen;
  for (const auto& item : set.items) {
    CHECK(item.public_id.size() == 32);
    const auto& hidden = set.mapping.at(item.public_id);
    CHECK(hidden.condition == Condition::memoryless);
    ++per_step[hidden.step_index];
    CHECK(seen.insert(hidden).second);
    const auto chain = std::find_if(c.chains.begin(), c.chains.end(),
                                    [&](const Chain& ch) { return ch.chain_id == hidden.chain_id; });
    REQUIRE(chain != c.chains.end());
    CHECK(item.analysis == chain->analyses[hidden.step_index]);
    CHECK(item.ce_text == chain->steps[hidden.step_index].ce_text);
  }
  CHECK(per_step == std::map<int, int>{{1, 10}, {3, 10}, {5, 10}});

  std::vector<std::string> ids;
  for (const auto& ch : c.chains) ids.push_back(ch.chain_id);
  CHECK(blinding_findings(items_document(set), ids).empty());
}

TEST_CASE("export is reproducible from the seed") {
  auto& c = corpus();
  const auto a = build_annotation_set(c.chains, c.config.concepts, three_strata_request(5));
  const auto b = build_annotation_set(c.chains, c.config.concepts, three_strata_request(5));
  const auto other = build_annotation_set(c.chains, c.config.concepts, three_strata_request(6));
  CHECK(a.items == b.items);
  CHECK(a.mapping == b.mapping);
  CHECK(a.items != other.items);
}

TEST_CASE("the shipped 3 x 20 design yields 60 items") {
  auto& c = corpus();
  auto r = three_strata_request();
  r.condition.reset();
  r.per_stratum = 20;
  CHECK(build_annotation_set(c.chains, c.config.concepts, r).items.size() == 60);
}

TEST_CASE("short strata are refused") {
  auto& c = corpus();
  auto r = three_strata_request();
  r.per_stratum = 31;
  CHECK(error_kind([&] { build_annotation_set(c.chains, c.config.concepts, r); }) ==
        ErrorKind::InsufficientItems);
  r.per_stratum = 5;
  r.step_indices = {6};
  CHECK(error_kind([&] { build_annotation_set(c.chains, c.config.concepts, r); }) ==
        ErrorKind::InsufficientItems);
  r.set_id = "../escape";
  CHECK(error_kind([&] { build_annotation_set(c.chains, c.config.concepts, r); }) ==
        ErrorKind::ConfigError);
}

TEST_CASE("audit flags leaks") {
  json doc{{"set_id", "s"},
           {"N", 1},
           {"items", json::array({{{"public_id", "p"},
                                   {"concept", "game"},
                                   {"analysis", "a"},
                                   {"ce_text", "b"}}})}};
  CHECK(blinding_findings(doc, {"chain-123"}).empty());

  auto extra = doc;
  extra["items"][0]["step_index"] = 3;
  CHECK_FALSE(structural_findings(extra, {}).empty());

  auto id_leak = doc;
  id_leak["items"][0]["ce_text"] = "see chain-123";
  CHECK_FALSE(structural_findings(id_leak, {"chain-123"}).empty());

  auto condition_leak = doc;
  condition_leak["items"][0]["analysis"] = "produced WITH_HISTORY";
  CHECK_FALSE(structural_findings(condition_leak, {}).empty());

  auto soft = doc;
  soft["items"][0]["ce_text"] = "At this iteration of the debate";
  CHECK(structural_findings(soft, {}).empty());
  CHECK_FALSE(blinding_findings(soft, {}).empty());

  AnnotationSet bad;
  bad.set_id = "s";
  bad.items = {AnnotationItem{"p", "game", "a", "mentions chain-9"}};
  bad.mapping["p"] = HiddenIdentity{"chain-9", "game", 1, Condition::memoryless};
  cxtest::TempDir dir;
  CHECK(error_kind([&] { write_annotation_set(dir / "s", bad); }) == ErrorKind::BlindingViolation);
  CHECK_FALSE(std::filesystem::exists(dir / "s" / "items.json"));
}

TEST_CASE("response validation") {
  const json ok{{"public_id", "p"}, {"category", "valid_false_negative"}, {"importance", 4},
                {"comment", "fine"}};
  const auto r = parse_response(ok);
  CHECK(r.category == VerdictCategory::valid_false_negative);
  CHECK(r.comment == "fine");
  CHECK_FALSE(r.alternative_ce.has_value());

  auto bad = ok;
  bad["importance"] = 0;
  CHECK(error_kind([&] { parse_response(bad); }) == ErrorKind::ValidationError);
  bad["importance"] = 2.5;
  CHECK(error_kind([&] { parse_response(bad); }) == ErrorKind::ValidationError);
  bad["importance"] = "3";
  CHECK(error_kind([&] { parse_response(bad); }) == ErrorKind::ValidationError);
  bad = ok;
  bad.erase("category");
  CHECK(error_kind([&] { parse_response(bad); }) == ErrorKind::ValidationError);
  bad["category"] = "mostly_valid";
  CHECK(error_kind([&] { parse_response(bad); }) == ErrorKind::ValidationError);
  CHECK(error_kind([&] { parse_response(json::array()); }) == ErrorKind::ValidationError);
}

TEST_CASE("progress labels") {
  CHECK(Progress{0, 60}.label() == "Item 1 of 60");
  CHECK(Progress{59, 60}.label() == "Item 60 of 60");
  CHECK(Progress{60, 60}.complete());
  CHECK_FALSE(Progress{59, 60}.complete());
}

TEST_CASE("rater sessions, supersession and unblinding") {
  auto& c = corpus();
  cxtest::TempDir dir;
  const auto set = build_annotation_set(c.chains, c.config.concepts, three_strata_request());
  write_annotation_set(dir / "human_eval", set);
  CHECK(std::filesystem::exists(dir / "human_eval" / "mapping.sealed.json"));

  {
    AnnotationStore store(dir / "human_eval", cxtest::fixed_clock);
    CHECK(store.size() == 30);
    auto next = store.next_item("H1");
    CHECK(next.item == set.items.front());
    CHECK(next.progress.label() == "Item 1 of 30");
    store.submit("H1", response(next.item.public_id, VerdictCategory::invalid_handled, 2));
    next = store.next_item("H1");
    CHECK(next.item == set.items[1]);
    CHECK(next.progress.label() == "Item 2 of 30");

    CHECK(error_kind([&] { store.next_item("H9"); }) == ErrorKind::UnknownItem);
    CHECK(error_kind([&] { store.submit("H1", response("nope", VerdictCategory::invalid_handled, 2)); }) ==
          ErrorKind::UnknownItem);
    auto wrong = response(set.items[0].public_id, VerdictCategory::invalid_handled, 2);
    wrong.rater_id = "H2";
    CHECK(error_kind([&] { store.submit("H1", wrong); }) == ErrorKind::ValidationError);

    // A resubmission replaces the earlier answer but does not advance progress.
    const auto p = store.submit(
        "H1", response(set.items[0].public_id, VerdictCategory::valid_false_positive, 5));
    CHECK(p.answered == 1);
  }

  // Sessions survive a restart.
  AnnotationStore reopened(dir / "human_eval", cxtest::fixed_clock);
  CHECK(reopened.progress("H1").answered == 1);
  for (std::size_t i = 1; i < set.items.size(); ++i) {
    reopened.submit("H1", response(reopened.next_item("H1").item.public_id,
                                   VerdictCategory::invalid_unclear, 1));
  }
  CHECK(error_kind([&] { reopened.next_item("H1"); }) == ErrorKind::SessionComplete);

  const auto log = load_responses(dir / "human_eval");
  CHECK(log.history.size() == 31);
  CHECK(log.latest.size() == 30);
  const auto table = unblind(dir / "human_eval");
  CHECK(table.rows().size() == 30);
  const auto& first = set.mapping.at(set.items[0].public_id);
  const auto* row = table.find(item_id_for(first.chain_id, first.step_index), "H1");
  REQUIRE(row != nullptr);
  CHECK(row->category == VerdictCategory::valid_false_positive);
  CHECK(row->importance == 5);
  CHECK(row->coarse_valid);
}

TEST_CASE("five raters over sixty items unblind to 300 rows") {
  auto& c = corpus();
  cxtest::TempDir dir;
  auto r = three_strata_request();
  r.condition.reset();
  r.per_stratum = 20;
  const auto set = build_annotation_set(c.chains, c.config.concepts, r);
  write_annotation_set(dir / "s", set);
  AnnotationStore store(dir / "s", cxtest::fixed_clock);
  for (const auto& rater : set.raters) {
    for (std::size_t i = 0; i < set.items.size(); ++i) {
      store.submit(rater, response(set.items[i].public_id, kAllCategories[i % 4],
                                   1 + static_cast<int>(i % 5)));
    }
  }
  const auto table = unblind(dir / "s");
  CHECK(table.rows().size() == 300);
  CHECK(table.raters() == std::vector<std::string>{"H1", "H2", "H3", "H4", "H5"});
  CHECK(table.items().size() == 60);
}

TEST_CASE("malformed log lines are quarantined with line numbers") {
  auto& c = corpus();
  cxtest::TempDir dir;
  const auto set = build_annotation_set(c.chains, c.config.concepts, three_strata_request());
  write_annotation_set(dir / "s", set);
  const auto id = set.items[0].public_id;
  write_file_atomic(dir / "s" / "responses" / "H2.jsonl",
                    "{\"public_id\":\"" + id +
                        "\",\"category\":\"invalid_handled\",\"importance\":3}\n"
                        "{truncated\n"
                        "{\"public_id\":\"" + id + "\",\"category\":\"invalid_handled\",\"importance\":9}\n");
  const auto log = load_responses(dir / "s");
  CHECK(log.latest.size() == 1);
  CHECK(log.latest[0].rater_id == "H2");
  REQUIRE(log.quarantined.size() == 2);
  CHECK(log.quarantined[0].line_number == 2);
  CHECK(log.quarantined[1].line_number == 3);
  CHECK(unblind(dir / "s").rows().size() == 1);
}

TEST_CASE("responses to unmapped ids are a mapping gap") {
  std::map<std::string, HiddenIdentity> mapping{{"a", {"c1", "game", 1, Condition::memoryless}}};
  auto r = response("b", VerdictCategory::invalid_handled, 1);
  r.rater_id = "H1";
  CHECK(error_kind([&] { unblind(mapping, {r}); }) == ErrorKind::MappingGap);
  r.public_id = "a";
  CHECK(unblind(mapping, {r}).rows().size() == 1);
}

TEST_CASE("csv ingest accepts valid rows and reports the rest") {
  auto& c = corpus();
  cxtest::TempDir dir;
  const auto set = build_annotation_set(c.chains, c.config.concepts, three_strata_request());
  write_annotation_set(dir / "s", set);
  const auto& a = set.items[0].public_id;
  const auto& b = set.items[1].public_id;
  write_file_atomic(dir / "sheet.csv",
                    "public_id,rater_id,category,importance,comment\n" + a +
                        ",H3,valid_false_negative,4,\"nice, subtle\"\n" + b +
                        ",H3,invalid_unclear,seven,\n" + b + ",H3,maybe,2,\n" + "unknownid,H3,invalid_handled,2,\n" +
                        b + ",H3,invalid_handled,2,\n");
  const auto result = ingest_csv(dir / "s", dir / "sheet.csv", cxtest::fixed_clock);
  CHECK(result.accepted == 2);
  REQUIRE(result.rejected.size() == 3);
  CHECK(result.rejected[0].line_number == 3);
  CHECK(result.rejected[1].line_number == 4);
  CHECK(result.rejected[2].line_number == 5);
  const auto table = unblind(dir / "s");
  CHECK(table.rows().size() == 2);

  write_file_atomic(dir / "bad.csv", "public_id,category\nx,y\n");
  CHECK(error_kind([&] { ingest_csv(dir / "s", dir / "bad.csv"); }) == ErrorKind::ValidationError);
}

TEST_CASE("safe tokens") {
  CHECK(is_safe_token("human_eval-2"));
  CHECK_FALSE(is_safe_token(""));
  CHECK_FALSE(is_safe_token("../x"));
  CHECK_FALSE(is_safe_token("a b"));
  CHECK_FALSE(is_safe_token(std::string(129, 'a')));
}
