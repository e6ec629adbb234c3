#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace cxgame {

struct PromptTemplate {
  std::string id;  // e.g. "ce.v1"
  std::string system;
  std::string user;
};

// Rendered system/user text plus the template that produced it.
struct PromptPair {
  std::string template_id;
  std::string system;
  std::string user;

  std::string digest() const;
};

using PromptVars = std::map<std::string, std::string, std::less<>>;

// Versioned prompt templates. Template files look like
//
//   id: ce.v1
//   --- system
//   ...
//   --- user
//   ... {{placeholder}} ...
//
// Logical names ("ce", "repair", ...) resolve to the highest loaded version.
class PromptLibrary {
 public:
  // The templates shipped in prompts/, compiled into the binary.
  static PromptLibrary embedded();
  // Embedded defaults overlaid with every *.txt file in `dir`.
  static PromptLibrary with_overrides(const std::filesystem::path& dir);

  static PromptTemplate parse(std::string_view text);

  void add(PromptTemplate tmpl);
  // Accepts a full id ("ce.v1") or a logical name ("ce").
  const PromptTemplate& get(std::string_view name) const;

  // Substitutes {{name}} placeholders in a single pass; a placeholder with
  // no value is an error.
  PromptPair render(std::string_view name, const PromptVars& vars) const;

  // template id -> sha256 of its source, for run manifests.
  std::map<std::string, std::string> fingerprints() const;

 private:
  std::map<std::string, PromptTemplate, std::less<>> by_id_;
  std::map<std::string, std::string, std::less<>> latest_;
};

std::string substitute(std::string_view text, const PromptVars& vars);

}  // namespace cxgame
