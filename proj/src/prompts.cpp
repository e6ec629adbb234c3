#include "cxgame/prompts.hpp"

#include <fmt/format.h>

#include "cxgame/error.hpp"
#include "cxgame/io.hpp"
#include "cxgame/prompts_embedded.hpp"
#include "cxgame/provider.hpp"

namespace cxgame {

namespace {

struct VersionedName {
  std::string logical;
  int version = 0;
};

VersionedName split_version(std::string_view id) {
  const auto pos = id.rfind(".v");
  if (pos == std::string_view::npos) return {std::string(id), 0};
  int version = 0;
  for (char c : id.substr(pos + 2)) {
    if (c < '0' || c > '9') return {std::string(id), 0};
    version = version * 10 + (c - '0');
  }
  return {std::string(id.substr(0, pos)), version};
}

std::string_view strip_one_newline(std::string_view s) {
  if (!s.empty() && s.back() == '\n') s.remove_suffix(1);
  return s;
}

}  // namespace

std::string PromptPair::digest() const { return prompt_digest(template_id, system, user); }

PromptTemplate PromptLibrary::parse(std::string_view text) {
  constexpr std::string_view kSystem = "--- system\n";
  constexpr std::string_view kUser = "--- user\n";
  if (text.substr(0, 4) != "id: ") {
    throw Error(ErrorKind::ConfigError, "prompt template must start with 'id: '");
  }
  const auto eol = text.find('\n');
  PromptTemplate out;
  out.id = std::string(text.substr(4, eol - 4));
  while (!out.id.empty() && (out.id.back() == ' ' || out.id.back() == '\r')) out.id.pop_back();
  const auto sys = text.find(kSystem);
  const auto usr = text.find(kUser);
  if (sys == std::string_view::npos || usr == std::string_view::npos || usr < sys) {
    throw Error(ErrorKind::ConfigError,
                fmt::format("prompt template {} needs '--- system' then '--- user'", out.id));
  }
  out.system = std::string(
      strip_one_newline(text.substr(sys + kSystem.size(), usr - sys - kSystem.size())));
  out.user = std::string(strip_one_newline(text.substr(usr + kUser.size())));
  return out;
}

PromptLibrary PromptLibrary::embedded() {
  PromptLibrary lib;
  for (const auto& [name, body] : detail::kEmbeddedPrompts) lib.add(parse(body));
  return lib;
}

PromptLibrary PromptLibrary::with_overrides(const std::filesystem::path& dir) {
  PromptLibrary lib = embedded();
  if (!std::filesystem::is_directory(dir)) {
    throw Error(ErrorKind::ConfigError, "prompts directory not found: " + dir.string());
  }
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".txt") lib.add(parse(read_text_file(entry.path())));
  }
  return lib;
}

void PromptLibrary::add(PromptTemplate tmpl) {
  const auto name = split_version(tmpl.id);
  auto it = latest_.find(name.logical);
  if (it == latest_.end() || split_version(it->second).version <= name.version) {
    latest_[name.logical] = tmpl.id;
  }
  by_id_[tmpl.id] = std::move(tmpl);
}

const PromptTemplate& PromptLibrary::get(std::string_view name) const {
  if (auto it = by_id_.find(name); it != by_id_.end()) return it->second;
  if (auto it = latest_.find(name); it != latest_.end()) return by_id_.find(it->second)->second;
  throw Error(ErrorKind::ConfigError, fmt::format("unknown prompt template '{}'", name));
}

PromptPair PromptLibrary::render(std::string_view name, const PromptVars& vars) const {
  const auto& tmpl = get(name);
  return PromptPair{tmpl.id, substitute(tmpl.system, vars), substitute(tmpl.user, vars)};
}

std::map<std::string, std::string> PromptLibrary::fingerprints() const {
  std::map<std::string, std::string> out;
  for (const auto& [id, tmpl] : by_id_) {
    out[id] = sha256_hex(tmpl.system + '\0' + tmpl.user);
  }
  return out;
}

std::string substitute(std::string_view text, const PromptVars& vars) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto open = text.find("{{", i);
    if (open == std::string_view::npos) {
      out.append(text.substr(i));
      break;
    }
    const auto close = text.find("}}", open + 2);
    if (close == std::string_view::npos) {
      out.append(text.substr(i));
      break;
    }
    out.append(text.substr(i, open - i));
    const auto key = text.substr(open + 2, close - open - 2);
    auto it = vars.find(key);
    if (it == vars.end()) {
      throw Error(ErrorKind::InvariantViolation,
                  fmt::format("prompt placeholder '{{{{{}}}}}' has no value", key));
    }
    out.append(it->second);
    i = close + 2;
  }
  return out;
}

}  // namespace cxgame
