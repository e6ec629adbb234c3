#include <doctest.h>

#include <sstream>

#include "cxgame/cli.hpp"
#include "cxgame/judge.hpp"
#include "cxgame/stats.hpp"
#include "support.hpp"

using namespace cxgame;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  args.push_back("--log-level");
  args.push_back("off");
  const int code = dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

Outcome cli_raw(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::string config_path(const char* name) {
  return (cxtest::source_dir() / "configs" / name).string();
}

// A small offline config written next to the shipped concept list.
std::string small_mock_config(const cxtest::TempDir& dir) {
  const auto path = dir / "small.toml";
  write_file_atomic(path, "run_id = \"small\"\nseed = 3\niterations = 3\nchains_per_condition = 1\n"
                          "parallelism = 4\nconcepts_file = \"" +
                              (cxtest::source_dir() / "configs" / "concepts.toml").generic_string() +
                              "\"\n[schedule]\nmode = \"self_play\"\nmodels = [\"mock-opus\"]\n"
                              "[judge]\nmodel = \"mock-judge\"\nce_positions = \"all\"\n"
                              "analysis_positions = \"all\"\n[tagging]\nmodel = \"mock-tagger\"\n"
                              "[mock]\nenabled = true\n");
  return path.string();
}

}  // namespace

TEST_CASE("dry run prints the plan and touches nothing") {
  cxtest::TempDir dir;
  const auto r = cli({"run", "--config", config_path("paper_mixed.toml"), "--run-dir",
                      (dir / "run").string(), "--dry-run"});
  CHECK(r.code == 0);
  CHECK(r.out.find("120 chains, 50 iterations each, 6000 cycles") != std::string::npos);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 3 + 120);
  CHECK_FALSE(std::filesystem::exists(dir / "run"));
}

TEST_CASE("unknown subcommands and flags exit 1 with usage") {
  auto r = cli_raw({"frobnicate"});
  CHECK(r.code == 1);
  CHECK(r.err.find("Usage") != std::string::npos);
  r = cli_raw({"run", "--bogus-flag"});
  CHECK(r.code == 1);
  CHECK(r.err.find("--bogus-flag") != std::string::npos);
  r = cli_raw({});
  CHECK(r.code == 1);
}

TEST_CASE("config errors exit 1") {
  cxtest::TempDir dir;
  auto r = cli({"run", "--config", (dir / "missing.toml").string()});
  CHECK(r.code == 1);
  CHECK_FALSE(r.err.empty());
  r = cli({"run"});
  CHECK(r.code == 1);
  r = cli({"run", "--config", config_path("offline_mock.toml"), "--parallelism", "0"});
  CHECK(r.code == 1);
}

TEST_CASE("offline pipeline through the command line") {
  cxtest::TempDir dir;
  const auto cfg = small_mock_config(dir);
  const auto run = (dir / "run").string();

  auto r = cli({"run", "--config", cfg, "--run-dir", run});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("run dir:") != std::string::npos);

  r = cli({"report", "--run-dir", run});
  CHECK(r.code == 1);
  CHECK(r.err.find("MissingInputs: stage has not run: judgments") != std::string::npos);
  CHECK(r.err.find("MissingInputs: stage has not run: tags") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "run" / "reports" / "length_series.csv"));

  r = cli({"judge", "--run-dir", run});
  CHECK(r.code == 0);
  r = cli({"judge", "--run-dir", run});
  CHECK(r.out.find("0 judged, 120 reused") != std::string::npos);

  r = cli({"report", "--run-dir", run});
  CHECK(r.code == 1);
  CHECK(r.err.find("tags") != std::string::npos);
  CHECK(r.err.find("judgments") == std::string::npos);

  r = cli({"tag", "--run-dir", run});
  CHECK(r.code == 0);
  r = cli({"report", "--run-dir", run});
  CHECK(r.code == 0);
  const auto first = read_text_file(dir / "run" / "reports" / "summary.json");
  CHECK(cli({"report", "--run-dir", run}).code == 0);
  CHECK(read_text_file(dir / "run" / "reports" / "summary.json") == first);

  r = cli({"resume", "--run-dir", run});
  CHECK(r.code == 0);

  // Annotation round trip: export, ingest, unblind, agreement.
  r = cli({"annotate", "export", "--run-dir", run, "--set-id", "pilot", "--iterations", "0,2",
           "--per-iteration", "10", "--raters", "H1,H2"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("exported 20 items") != std::string::npos);
  r = cli({"annotate", "export", "--run-dir", run, "--set-id", "pilot", "--iterations", "0,2",
           "--per-iteration", "10"});
  CHECK(r.code == 1);

  const auto items = read_json_file(dir / "run" / "annotation" / "pilot" / "items.json");
  std::string sheet = "public_id,rater_id,category,importance\n";
  for (const auto& item : items["items"]) {
    for (const char* rater : {"H1", "H2"}) {
      sheet += item["public_id"].get<std::string>() + "," + rater + ",invalid_handled,2\n";
    }
  }
  write_file_atomic(dir / "sheet.csv", sheet);
  r = cli({"annotate", "ingest", "--run-dir", run, "--set-id", "pilot", "--csv",
           (dir / "sheet.csv").string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("accepted 40") != std::string::npos);

  const auto ratings = (dir / "ratings.jsonl").string();
  r = cli({"annotate", "unblind", "--run-dir", run, "--set-id", "pilot", "--out", ratings});
  CHECK(r.code == 0);
  CHECK(load_rating_table(ratings).rows().size() == 40);

  const auto out_csv = (dir / "agreement.csv").string();
  r = cli({"stats", "agreement", "--ratings", ratings, "--judge",
           (dir / "run" / "judgments" / "ce.jsonl").string(), "--out", out_csv});
  CHECK(r.code == 0);
  const auto rows = parse_csv(read_text_file(out_csv));
  REQUIRE(rows.size() == 1 + 1 + 2 + 1);
  CHECK(rows[0][0] == "pair");
  CHECK(rows[1][0] == "Hum. cons. -- mock-judge");

  r = cli({"report", "--run-dir", run});
  CHECK(r.code == 0);
  CHECK(std::filesystem::exists(dir / "run" / "reports" / "agreement.csv"));
}

TEST_CASE("commands on a missing run dir fail cleanly") {
  cxtest::TempDir dir;
  for (const char* cmd : {"judge", "tag", "report", "resume"}) {
    CAPTURE(cmd);
    const auto r = cli({cmd, "--run-dir", (dir / "nothing").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("MissingInputs") != std::string::npos);
  }
}

TEST_CASE("serve dry run names the address") {
  cxtest::TempDir dir;
  const auto r = cli({"annotate", "serve", "--annotation-dir", dir.path().string(), "--port",
                      "0", "--dry-run"});
  CHECK(r.code == 0);
  CHECK(r.out.find("127.0.0.1") != std::string::npos);
}
