#include <doctest.h>

#include <thread>

#include "cxgame/io.hpp"
#include "support.hpp"

using namespace cxgame;

TEST_CASE("atomic write replaces contents") {
  cxtest::TempDir dir;
  const auto p = dir / "a" / "b.txt";
  std::filesystem::create_directories(p.parent_path());
  write_file_atomic(p, "first");
  write_file_atomic(p, "second");
  CHECK(read_text_file(p) == "second");
  CHECK(std::distance(std::filesystem::directory_iterator(p.parent_path()),
                      std::filesystem::directory_iterator()) == 1);
}

TEST_CASE("read_text_file on a missing file is an IoError") {
  cxtest::TempDir dir;
  try {
    read_text_file(dir / "nope");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::IoError);
  }
}

TEST_CASE("jsonl quarantines bad lines with line numbers") {
  cxtest::TempDir dir;
  const auto p = dir / "x.jsonl";
  write_file_atomic(p, "{\"a\":1}\n\nnot json\n[1,2]\n{\"b\":2}\n");
  const auto c = read_jsonl(p);
  REQUIRE(c.records.size() == 2);
  CHECK(c.records[1]["b"] == 2);
  REQUIRE(c.quarantined.size() == 2);
  CHECK(c.quarantined[0].line_number == 3);
  CHECK(c.quarantined[0].text == "not json");
  CHECK(c.quarantined[1].line_number == 4);
}

TEST_CASE("appender writes one whole line per record across threads") {
  cxtest::TempDir dir;
  const auto p = dir / "log.jsonl";
  {
    JsonlAppender log(p);
    std::vector<std::jthread> threads;
    for (int t = 0; t < 8; ++t) {
      threads.emplace_back([&, t] {
        for (int i = 0; i < 100; ++i) log.append(json{{"t", t}, {"i", i}, {"pad", std::string(200, 'x')}});
      });
    }
    threads.clear();
    CHECK(log.lines_written() == 800);
  }
  const auto c = read_jsonl(p);
  CHECK(c.records.size() == 800);
  CHECK(c.quarantined.empty());
}

TEST_CASE("csv escaping round-trips through the parser") {
  const std::vector<std::string> fields{"plain", "with,comma", "with \"quote\"", "multi\nline", ""};
  const auto text = csv_row(fields) + csv_row({"a", "b", "c", "d", "e"});
  const auto rows = parse_csv(text);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == fields);
  CHECK(csv_escape("x,y") == "\"x,y\"");
  CHECK(csv_escape("plain") == "plain");
}

TEST_CASE("number formatting") {
  CHECK(format_number(0.5) == "0.5");
  CHECK(format_number(2.0) == "2");
  CHECK(std::stod(format_number(0.1 + 0.2)) == 0.1 + 0.2);
  CHECK(format_optional(std::nullopt) == "NA");
}
