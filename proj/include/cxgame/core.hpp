#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cxgame/error.hpp"

namespace cxgame {

using json = nlohmann::json;

enum class PartOfSpeech { noun, verb };
enum class Condition { memoryless, with_history };
enum class ScheduleMode { self_play, mixed };
enum class ChainStatus { running, complete, failed };
enum class Role { ce, repair };

enum class VerdictCategory {
  valid_false_positive,  // not an instance, but the analysis includes it
  valid_false_negative,  // an instance, but the analysis excludes it
  invalid_handled,       // the analysis classifies it correctly
  invalid_unclear,       // confusing, unrealistic or off-target
};

inline constexpr VerdictCategory kAllCategories[] = {
    VerdictCategory::valid_false_positive, VerdictCategory::valid_false_negative,
    VerdictCategory::invalid_handled, VerdictCategory::invalid_unclear};

std::string_view to_string(PartOfSpeech v);
std::string_view to_string(Condition v);
std::string_view to_string(ScheduleMode v);
std::string_view to_string(ChainStatus v);
std::string_view to_string(Role v);
std::string_view to_string(VerdictCategory v);

std::optional<PartOfSpeech> parse_part_of_speech(std::string_view s);
std::optional<Condition> parse_condition(std::string_view s);
std::optional<ScheduleMode> parse_schedule_mode(std::string_view s);
std::optional<ChainStatus> parse_chain_status(std::string_view s);
std::optional<VerdictCategory> parse_category(std::string_view s);

struct Concept {
  std::string id;            // short slug, e.g. "to_lie"
  std::string surface_form;  // display form, e.g. "to lie"
  PartOfSpeech part_of_speech = PartOfSpeech::noun;
  std::string seed_analysis;

  bool operator==(const Concept&) const = default;
};

struct ModelSchedule {
  ScheduleMode mode = ScheduleMode::self_play;
  std::vector<std::string> model_ids;
  std::uint64_t rng_seed = 0;

  // Empty when the schedule is usable.
  std::vector<std::string> violations() const;
  bool operator==(const ModelSchedule&) const = default;
};

struct StepRecord {
  int step_index = 0;
  std::string ce_text;
  std::string repair_text;
  std::string ce_model_id;
  std::string repair_model_id;
  std::string ce_template_id;
  std::string repair_template_id;
  std::string ce_prompt_digest;
  std::string repair_prompt_digest;
  std::string ce_ts;
  std::string repair_ts;

  bool operator==(const StepRecord&) const = default;
};

struct Chain {
  std::string chain_id;
  std::string concept_id;
  Condition condition = Condition::memoryless;
  int replicate = 0;
  ModelSchedule schedule;
  std::vector<std::string> analyses;  // A_0 .. A_n
  std::vector<StepRecord> steps;      // steps[i] carries CE_{i+1} and A_{i+1}
  ChainStatus status = ChainStatus::running;
  std::string error;                  // first failure message, if any

  bool operator==(const Chain&) const = default;
};

struct Verdict {
  VerdictCategory category = VerdictCategory::invalid_unclear;
  bool coarse_valid = false;
  std::string rationale;
  std::optional<int> importance;

  bool operator==(const Verdict&) const = default;
};

// Builds a verdict with coarse_valid derived from the category.
Verdict make_verdict(VerdictCategory category, std::string rationale,
                     std::optional<int> importance);

struct AnalysisScore {
  int position = 0;
  int accuracy = 0;
  int conciseness = 0;
  std::string judge_model_id;

  bool operator==(const AnalysisScore&) const = default;
};

// One line of judgments/ce.jsonl.
struct CeJudgment {
  std::string chain_id;
  std::string concept_id;
  Condition condition = Condition::memoryless;
  int step_index = 0;
  Verdict verdict;
  std::string judge_model_id;
  std::string template_id;
};

// One line of judgments/analysis.jsonl.
struct AnalysisJudgment {
  std::string chain_id;
  std::string concept_id;
  Condition condition = Condition::memoryless;
  AnalysisScore score;
  std::string template_id;
};

bool coarse_validity(VerdictCategory category);

// Number of maximal runs of non-whitespace characters.
std::size_t word_count(std::string_view text);

// Reports every violated Chain invariant. Never throws.
std::vector<std::string> validate_chain(const Chain& chain);
// Same, plus the A_0 == seed check against the concept.
std::vector<std::string> validate_chain(const Chain& chain, const Concept& concept_);

std::string sha256_hex(std::string_view data);

// chain_id = hash(concept_id, condition, replicate, global seed).
std::string make_chain_id(std::string_view concept_id, Condition condition,
                          int replicate, std::uint64_t global_seed);

// Stable 64-bit seed derived from a global seed and a label.
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view label);

// ISO-8601 UTC wall clock, millisecond resolution.
std::string utc_timestamp();

void to_json(json& j, const Concept& v);
void from_json(const json& j, Concept& v);
void to_json(json& j, const ModelSchedule& v);
void from_json(const json& j, ModelSchedule& v);
void to_json(json& j, const StepRecord& v);
void from_json(const json& j, StepRecord& v);
void to_json(json& j, const Chain& v);
void from_json(const json& j, Chain& v);
void to_json(json& j, const Verdict& v);
void from_json(const json& j, Verdict& v);
void to_json(json& j, const AnalysisScore& v);
void from_json(const json& j, AnalysisScore& v);
void to_json(json& j, const CeJudgment& v);
void from_json(const json& j, CeJudgment& v);
void to_json(json& j, const AnalysisJudgment& v);
void from_json(const json& j, AnalysisJudgment& v);

}  // namespace cxgame
