#include "cxgame/io.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include <fmt/format.h>

namespace cxgame {

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error(ErrorKind::IoError, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::IoError, "rename failed for " + path.string() + ": " + ec.message());
}

void write_json_file(const fs::path& path, const json& value) {
  write_file_atomic(path, value.dump(2) + "\n");
}

json read_json_file(const fs::path& path) {
  const auto text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::IoError, fmt::format("{} is not valid JSON: {}", path.string(), e.what()));
  }
}

JsonlContents read_jsonl(const fs::path& path) {
  JsonlContents out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      auto value = json::parse(line);
      if (!value.is_object()) {
        out.quarantined.push_back({number, line, "not a JSON object"});
        continue;
      }
      out.records.push_back(std::move(value));
    } catch (const json::exception& e) {
      out.quarantined.push_back({number, line, e.what()});
    }
  }
  return out;
}

JsonlAppender::JsonlAppender(fs::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  out_.open(path_, std::ios::binary | std::ios::app);
  if (!out_) throw Error(ErrorKind::IoError, "cannot open " + path_.string() + " for append");
}

void JsonlAppender::append(const json& record) {
  const auto line = record.dump() + "\n";
  std::lock_guard lock(mutex_);
  out_ << line;
  out_.flush();
  if (!out_) throw Error(ErrorKind::IoError, "append failed on " + path_.string());
  ++lines_written_;
}

std::size_t JsonlAppender::lines_written() const {
  std::lock_guard lock(mutex_);
  return lines_written_;
}

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

std::string csv_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += csv_escape(fields[i]);
  }
  out += '\n';
  return out;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool row_has_content = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        quoted = true;
        row_has_content = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        row_has_content = true;
        break;
      case '\r':
        break;
      case '\n':
        if (row_has_content || !field.empty()) {
          row.push_back(std::move(field));
          rows.push_back(std::move(row));
        } else {
          rows.emplace_back();  // keep blank lines so line numbers stay aligned
        }
        row.clear();
        field.clear();
        row_has_content = false;
        break;
      default:
        field += c;
        row_has_content = true;
    }
  }
  if (row_has_content || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_number(double value) {
  if (!std::isfinite(value)) return "NA";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc{}) return fmt::format("{}", value);
  return std::string(buf, ptr);
}

std::string format_optional(const std::optional<double>& value) {
  return value ? format_number(*value) : "NA";
}

}  // namespace cxgame
