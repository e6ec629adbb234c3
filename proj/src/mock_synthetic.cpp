#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "cxgame/provider.hpp"

namespace cxgame {

namespace {

std::string between(std::string_view text, std::string_view open, std::string_view close) {
  const auto a = text.find(open);
  if (a == std::string_view::npos) return {};
  const auto start = a + open.size();
  const auto b = text.find(close, start);
  if (b == std::string_view::npos) return {};
  return std::string(text.substr(start, b - start));
}

double unit(std::uint64_t seed, std::string_view label) {
  return static_cast<double>(derive_seed(seed, label) >> 11) * 0x1.0p-53;
}

std::string concept_name(const CompletionRequest& r) {
  auto name = between(r.user_text, "Concept: ", " (");
  return name.empty() ? std::string("the concept") : name;
}

constexpr std::string_view kAdjectives[] = {"amber", "brisk", "coastal", "distant", "early",
                                            "faded", "gentle", "hidden", "idle", "jagged",
                                            "quiet", "rural", "silver", "urban", "winter"};
constexpr std::string_view kNouns[] = {"harbor", "orchard", "ledger", "market", "bridge",
                                       "kitchen", "meadow", "theater", "garage", "library",
                                       "festival", "workshop", "station", "courtyard", "ferry"};

// Two hashed words naming a scenario.
std::string scenario_name(const SyntheticScript& s, const CompletionRequest& r) {
  const auto h = derive_seed(s.seed, prompt_digest(r));
  return fmt::format("{} {}", kAdjectives[h % std::size(kAdjectives)],
                     kNouns[(h / std::size(kAdjectives)) % std::size(kNouns)]);
}

std::string synthetic_ce(const SyntheticScript& s, const CompletionRequest& r) {
  return fmt::format(
      "The {} scenario for {}: someone meets every clause of the current analysis, yet on "
      "reflection it is not a case of {}.",
      scenario_name(s, r), concept_name(r), concept_name(r));
}

std::string synthetic_repair(const SyntheticScript& s, const CompletionRequest& r) {
  auto analysis = between(r.user_text, "<analysis>\n", "\n</analysis>");
  if (analysis.empty()) analysis = "An unspecified analysis";
  while (!analysis.empty() && (analysis.back() == '.' || analysis.back() == ' ')) {
    analysis.pop_back();
  }
  return fmt::format("{}, provided it is not like the {} scenario.", analysis,
                     scenario_name(s, r));
}

std::string synthetic_verdict(const SyntheticScript& s, const RequestTag& tag) {
  const auto& rates = s.ce_valid_rate;
  const double rate = rates.empty()
                          ? 0.5
                          : rates[std::min<std::size_t>(static_cast<std::size_t>(
                                                            std::max(tag.index, 0)),
                                                        rates.size() - 1)];
  const auto key = fmt::format("judge_ce|{}|{}", tag.scope, tag.index);
  const bool valid = unit(s.seed, key) < rate;
  const bool flip = unit(s.seed, key + "|kind") < 0.5;
  const char* category = valid ? (flip ? "valid_false_positive" : "valid_false_negative")
                               : (flip ? "invalid_handled" : "invalid_unclear");
  const int importance =
      valid ? 3 + static_cast<int>(unit(s.seed, key + "|imp") * 3)
            : 1 + static_cast<int>(unit(s.seed, key + "|imp") * 3);
  return fmt::format(
      "```verdict\ncategory: {}\nimportance: {}\nrationale: Scripted verdict for position {}.\n```",
      category, std::clamp(importance, 1, 5), tag.index);
}

std::string synthetic_scores(const CompletionRequest& r, const RequestTag& tag) {
  const auto analysis = between(r.user_text, "<analysis>\n", "\n</analysis>");
  const auto words = static_cast<double>(word_count(analysis));
  const int conciseness = std::clamp(5 - static_cast<int>(std::floor((words - 11.0) / 20.0)), 1, 5);
  const int accuracy = tag.index == 0 ? 3 : 4;
  return fmt::format(
      "```scores\naccuracy: {}\nconciseness: {}\nrationale: Scripted score.\n```", accuracy,
      conciseness);
}

std::string synthetic_subconcepts(const SyntheticScript& s, const CompletionRequest& r) {
  std::string out = "```subconcepts\n";
  for (int k = 1; k <= s.subconcept_count; ++k) {
    out += fmt::format("- criterion_{:02d}: criterion {} appearing in definitions of {}\n", k, k,
                       concept_name(r));
  }
  out += "```";
  return out;
}

std::string synthetic_presence(const SyntheticScript& s, const CompletionRequest& r) {
  const auto block = between(r.user_text, "<subconcepts>\n", "\n</subconcepts>");
  const auto definition = between(r.user_text, "<definition>\n", "\n</definition>");
  const auto bucket = word_count(definition) / 12;
  std::size_t count = block.empty() ? 0 : 1;
  for (char c : block) count += c == '\n';
  std::string values;
  for (std::size_t k = 0; k < count; ++k) {
    // Presence drifts with definition length, so rows both persist and oscillate.
    const bool stable = unit(s.seed, fmt::format("stable|{}", k)) < 0.5;
    const auto label = stable ? fmt::format("tag|{}|{}", concept_name(r), k)
                              : fmt::format("tag|{}|{}|{}", concept_name(r), k, bucket);
    if (k) values += ',';
    values += unit(s.seed, label) < s.presence_rate ? '1' : '0';
  }
  return "```presence\npresence: " + values + "\n```";
}

}  // namespace

MockBackend::Responder make_synthetic_responder(SyntheticScript script) {
  return [script = std::move(script)](const CompletionRequest& r) -> std::string {
    const auto tag = RequestTag::parse(r.request_tag);
    if (tag.kind == "ce") return synthetic_ce(script, r);
    if (tag.kind == "repair") return synthetic_repair(script, r);
    if (tag.kind == "judge_ce") return synthetic_verdict(script, tag);
    if (tag.kind == "judge_analysis") return synthetic_scores(r, tag);
    if (tag.kind == "extract") return synthetic_subconcepts(script, r);
    if (tag.kind == "tag") return synthetic_presence(script, r);
    throw Error(ErrorKind::ScriptExhausted, "synthetic mock has no rule for tag " + r.request_tag);
  };
}

}  // namespace cxgame
