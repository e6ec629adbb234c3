#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "cxgame/core.hpp"

namespace cxgame {

namespace fs = std::filesystem;

std::string read_text_file(const fs::path& path);

// Writes to a sibling temp file and renames over the target.
void write_file_atomic(const fs::path& path, std::string_view contents);

void write_json_file(const fs::path& path, const json& value);
json read_json_file(const fs::path& path);

struct QuarantinedLine {
  std::size_t line_number = 0;  // 1-based
  std::string text;
  std::string reason;
};

struct JsonlContents {
  std::vector<json> records;
  std::vector<QuarantinedLine> quarantined;
};

// Blank lines are skipped; lines that fail to parse as JSON objects are
// quarantined with their line number.
JsonlContents read_jsonl(const fs::path& path);

// Append-only JSONL writer; one line per append, serialized across threads.
class JsonlAppender {
 public:
  explicit JsonlAppender(fs::path path);

  void append(const json& record);
  std::size_t lines_written() const;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
  mutable std::mutex mutex_;
  std::ofstream out_;
  std::size_t lines_written_ = 0;
};

// RFC 4180 style CSV.
std::string csv_escape(std::string_view field);
std::string csv_row(const std::vector<std::string>& fields);
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

// Shortest round-trippable text for a double; "NA" for a missing value.
std::string format_number(double value);
std::string format_optional(const std::optional<double>& value);

}  // namespace cxgame
