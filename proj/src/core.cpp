#include "cxgame/core.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cstring>
#include <ctime>
#include <set>

#include <fmt/format.h>

namespace cxgame {

namespace {

template <typename Enum, std::size_t N>
std::optional<Enum> parse_enum(std::string_view s, const std::array<Enum, N>& values) {
  for (Enum v : values) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

template <typename Enum, std::size_t N>
Enum enum_from_json(const json& j, const std::array<Enum, N>& values, const char* what) {
  const auto s = j.get<std::string>();
  if (auto v = parse_enum(s, values)) return *v;
  throw Error(ErrorKind::ValidationError, fmt::format("unknown {} '{}'", what, s));
}

constexpr std::array kPos{PartOfSpeech::noun, PartOfSpeech::verb};
constexpr std::array kConditions{Condition::memoryless, Condition::with_history};
constexpr std::array kModes{ScheduleMode::self_play, ScheduleMode::mixed};
constexpr std::array kStatuses{ChainStatus::running, ChainStatus::complete,
                               ChainStatus::failed};
constexpr std::array kCategories{
    VerdictCategory::valid_false_positive, VerdictCategory::valid_false_negative,
    VerdictCategory::invalid_handled, VerdictCategory::invalid_unclear};

}  // namespace

std::string_view to_string(PartOfSpeech v) {
  return v == PartOfSpeech::noun ? "noun" : "verb";
}
std::string_view to_string(Condition v) {
  return v == Condition::memoryless ? "memoryless" : "with_history";
}
std::string_view to_string(ScheduleMode v) {
  return v == ScheduleMode::self_play ? "self_play" : "mixed";
}
std::string_view to_string(ChainStatus v) {
  switch (v) {
    case ChainStatus::running: return "running";
    case ChainStatus::complete: return "complete";
    case ChainStatus::failed: return "failed";
  }
  return "running";
}
std::string_view to_string(Role v) { return v == Role::ce ? "ce" : "repair"; }
std::string_view to_string(VerdictCategory v) {
  switch (v) {
    case VerdictCategory::valid_false_positive: return "valid_false_positive";
    case VerdictCategory::valid_false_negative: return "valid_false_negative";
    case VerdictCategory::invalid_handled: return "invalid_handled";
    case VerdictCategory::invalid_unclear: return "invalid_unclear";
  }
  return "invalid_unclear";
}

std::optional<PartOfSpeech> parse_part_of_speech(std::string_view s) {
  return parse_enum(s, kPos);
}
std::optional<Condition> parse_condition(std::string_view s) {
  return parse_enum(s, kConditions);
}
std::optional<ScheduleMode> parse_schedule_mode(std::string_view s) {
  return parse_enum(s, kModes);
}
std::optional<ChainStatus> parse_chain_status(std::string_view s) {
  return parse_enum(s, kStatuses);
}
std::optional<VerdictCategory> parse_category(std::string_view s) {
  return parse_enum(s, kCategories);
}

std::vector<std::string> ModelSchedule::violations() const {
  std::vector<std::string> out;
  if (mode == ScheduleMode::self_play && model_ids.size() != 1) {
    out.push_back(fmt::format("self_play schedule needs exactly 1 model id, got {}",
                              model_ids.size()));
  }
  if (mode == ScheduleMode::mixed) {
    std::set<std::string> distinct(model_ids.begin(), model_ids.end());
    if (distinct.size() < 2 || distinct.size() != model_ids.size()) {
      out.push_back("mixed schedule needs at least 2 distinct model ids");
    }
  }
  for (const auto& id : model_ids) {
    if (id.empty()) out.push_back("schedule contains an empty model id");
  }
  return out;
}

Verdict make_verdict(VerdictCategory category, std::string rationale,
                     std::optional<int> importance) {
  return Verdict{category, coarse_validity(category), std::move(rationale), importance};
}

bool coarse_validity(VerdictCategory category) {
  return category == VerdictCategory::valid_false_positive ||
         category == VerdictCategory::valid_false_negative;
}

std::size_t word_count(std::string_view text) {
  std::size_t count = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = c == ' ' || c == '\t' || c == '\n' || c == '\r' ||
                       c == '\v' || c == '\f';
    if (!space && !in_word) ++count;
    in_word = !space;
  }
  return count;
}

std::vector<std::string> validate_chain(const Chain& chain) {
  std::vector<std::string> out;
  if (chain.chain_id.empty()) out.emplace_back("chain_id is empty");
  if (chain.concept_id.empty()) out.emplace_back("concept_id is empty");
  for (auto& v : chain.schedule.violations()) out.push_back("schedule: " + v);

  if (chain.analyses.size() != chain.steps.size() + 1) {
    out.push_back(fmt::format("analyses/steps length mismatch at chain {}: {} analyses, {} steps",
                              chain.chain_id, chain.analyses.size(), chain.steps.size()));
  }
  if (chain.analyses.empty() || chain.analyses.front().empty()) {
    out.emplace_back("analyses[0] (seed analysis) is missing or empty");
  }

  const auto& models = chain.schedule.model_ids;
  auto known = [&](const std::string& id) {
    return std::find(models.begin(), models.end(), id) != models.end();
  };
  for (std::size_t i = 0; i < chain.steps.size(); ++i) {
    const auto& s = chain.steps[i];
    if (s.ce_text.empty()) out.push_back(fmt::format("steps[{}].ce_text is empty", i));
    if (s.repair_text.empty()) out.push_back(fmt::format("steps[{}].repair_text is empty", i));
    if (!known(s.ce_model_id)) {
      out.push_back(fmt::format("steps[{}].ce_model_id '{}' not in schedule", i, s.ce_model_id));
    }
    if (!known(s.repair_model_id)) {
      out.push_back(
          fmt::format("steps[{}].repair_model_id '{}' not in schedule", i, s.repair_model_id));
    }
    if (s.step_index < 0 || (i > 0 && s.step_index <= chain.steps[i - 1].step_index)) {
      out.push_back(fmt::format("steps[{}].step_index {} is not strictly increasing", i,
                                s.step_index));
    }
    if (i + 1 < chain.analyses.size() && chain.analyses[i + 1] != s.repair_text) {
      out.push_back(fmt::format("analyses[{}] differs from steps[{}].repair_text (step {})",
                                i + 1, i, i));
    }
  }
  if (chain.status == ChainStatus::complete && !chain.error.empty()) {
    out.emplace_back("complete chain carries an error message");
  }
  return out;
}

std::vector<std::string> validate_chain(const Chain& chain, const Concept& concept_) {
  auto out = validate_chain(chain);
  if (chain.concept_id != concept_.id) {
    out.push_back(fmt::format("concept_id '{}' does not match concept '{}'", chain.concept_id,
                              concept_.id));
  }
  if (!chain.analyses.empty() && chain.analyses.front() != concept_.seed_analysis) {
    out.emplace_back("analyses[0] differs from the concept's seed analysis");
  }
  return out;
}

std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::InvariantViolation, "SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string make_chain_id(std::string_view concept_id, Condition condition, int replicate,
                          std::uint64_t global_seed) {
  const auto key =
      fmt::format("{}\x1f{}\x1f{}\x1f{}", concept_id, to_string(condition), replicate, global_seed);
  return sha256_hex(key).substr(0, 16);
}

std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view label) {
  const auto hex = sha256_hex(fmt::format("{}\x1f{}", global_seed, label));
  return std::stoull(hex.substr(0, 16), nullptr, 16);
}

std::string utc_timestamp() {
  using namespace std::chrono;
  const auto now = system_clock::now();
  const auto secs = time_point_cast<seconds>(now);
  const auto ms = duration_cast<milliseconds>(now - secs).count();
  const std::time_t t = system_clock::to_time_t(secs);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  return fmt::format("{}.{:03d}Z", buf, ms);
}

// --- serialization ---------------------------------------------------------

void to_json(json& j, const Concept& v) {
  j = json{{"id", v.id},
           {"surface_form", v.surface_form},
           {"part_of_speech", to_string(v.part_of_speech)},
           {"seed_analysis", v.seed_analysis}};
}
void from_json(const json& j, Concept& v) {
  v.id = j.at("id").get<std::string>();
  v.surface_form = j.value("surface_form", v.id);
  v.part_of_speech = enum_from_json(j.at("part_of_speech"), kPos, "part_of_speech");
  v.seed_analysis = j.at("seed_analysis").get<std::string>();
}

void to_json(json& j, const ModelSchedule& v) {
  j = json{{"mode", to_string(v.mode)}, {"model_ids", v.model_ids}, {"rng_seed", v.rng_seed}};
}
void from_json(const json& j, ModelSchedule& v) {
  v.mode = enum_from_json(j.at("mode"), kModes, "schedule mode");
  v.model_ids = j.at("model_ids").get<std::vector<std::string>>();
  v.rng_seed = j.value("rng_seed", std::uint64_t{0});
}

void to_json(json& j, const StepRecord& v) {
  j = json{{"step_index", v.step_index},
           {"ce_text", v.ce_text},
           {"repair_text", v.repair_text},
           {"ce_model_id", v.ce_model_id},
           {"repair_model_id", v.repair_model_id},
           {"ce_template_id", v.ce_template_id},
           {"repair_template_id", v.repair_template_id},
           {"ce_prompt_digest", v.ce_prompt_digest},
           {"repair_prompt_digest", v.repair_prompt_digest},
           {"ce_ts", v.ce_ts},
           {"repair_ts", v.repair_ts}};
}
void from_json(const json& j, StepRecord& v) {
  v.step_index = j.at("step_index").get<int>();
  v.ce_text = j.at("ce_text").get<std::string>();
  v.repair_text = j.at("repair_text").get<std::string>();
  v.ce_model_id = j.at("ce_model_id").get<std::string>();
  v.repair_model_id = j.at("repair_model_id").get<std::string>();
  v.ce_template_id = j.value("ce_template_id", "");
  v.repair_template_id = j.value("repair_template_id", "");
  v.ce_prompt_digest = j.value("ce_prompt_digest", "");
  v.repair_prompt_digest = j.value("repair_prompt_digest", "");
  v.ce_ts = j.value("ce_ts", "");
  v.repair_ts = j.value("repair_ts", "");
}

void to_json(json& j, const Chain& v) {
  j = json{{"chain_id", v.chain_id},   {"concept_id", v.concept_id},
           {"condition", to_string(v.condition)},
           {"replicate", v.replicate}, {"schedule", v.schedule},
           {"analyses", v.analyses},   {"steps", v.steps},
           {"status", to_string(v.status)}, {"error", v.error}};
}
void from_json(const json& j, Chain& v) {
  v.chain_id = j.at("chain_id").get<std::string>();
  v.concept_id = j.at("concept_id").get<std::string>();
  v.condition = enum_from_json(j.at("condition"), kConditions, "condition");
  v.replicate = j.value("replicate", 0);
  v.schedule = j.at("schedule").get<ModelSchedule>();
  v.analyses = j.at("analyses").get<std::vector<std::string>>();
  v.steps = j.at("steps").get<std::vector<StepRecord>>();
  v.status = enum_from_json(j.at("status"), kStatuses, "chain status");
  v.error = j.value("error", "");
}

void to_json(json& j, const Verdict& v) {
  j = json{{"category", to_string(v.category)},
           {"coarse_valid", v.coarse_valid},
           {"rationale", v.rationale},
           {"importance", v.importance ? json(*v.importance) : json(nullptr)}};
}
void from_json(const json& j, Verdict& v) {
  v.category = enum_from_json(j.at("category"), kCategories, "verdict category");
  v.coarse_valid = coarse_validity(v.category);
  if (j.contains("coarse_valid") && j.at("coarse_valid").get<bool>() != v.coarse_valid) {
    throw Error(ErrorKind::ValidationError, "coarse_valid disagrees with category");
  }
  v.rationale = j.value("rationale", "");
  v.importance.reset();
  if (j.contains("importance") && !j.at("importance").is_null()) {
    const int imp = j.at("importance").get<int>();
    if (imp < 1 || imp > 5) {
      throw Error(ErrorKind::ValidationError, fmt::format("importance {} out of 1-5", imp));
    }
    v.importance = imp;
  }
}

void to_json(json& j, const AnalysisScore& v) {
  j = json{{"position", v.position},
           {"accuracy", v.accuracy},
           {"conciseness", v.conciseness},
           {"judge_model_id", v.judge_model_id}};
}
void from_json(const json& j, AnalysisScore& v) {
  v.position = j.at("position").get<int>();
  v.accuracy = j.at("accuracy").get<int>();
  v.conciseness = j.at("conciseness").get<int>();
  v.judge_model_id = j.value("judge_model_id", "");
  if (v.accuracy < 1 || v.accuracy > 5 || v.conciseness < 1 || v.conciseness > 5) {
    throw Error(ErrorKind::ValidationError, "analysis scores must be in 1-5");
  }
}

void to_json(json& j, const CeJudgment& v) {
  j = json(v.verdict);
  j["chain_id"] = v.chain_id;
  j["concept_id"] = v.concept_id;
  j["condition"] = to_string(v.condition);
  j["step_index"] = v.step_index;
  j["judge_model_id"] = v.judge_model_id;
  j["template_id"] = v.template_id;
}
void from_json(const json& j, CeJudgment& v) {
  v.verdict = j.get<Verdict>();
  v.chain_id = j.at("chain_id").get<std::string>();
  v.concept_id = j.value("concept_id", "");
  v.condition = enum_from_json(j.value("condition", json("memoryless")), kConditions,
                               "condition");
  v.step_index = j.at("step_index").get<int>();
  v.judge_model_id = j.value("judge_model_id", "");
  v.template_id = j.value("template_id", "");
}

void to_json(json& j, const AnalysisJudgment& v) {
  j = json(v.score);
  j["chain_id"] = v.chain_id;
  j["concept_id"] = v.concept_id;
  j["condition"] = to_string(v.condition);
  j["template_id"] = v.template_id;
}
void from_json(const json& j, AnalysisJudgment& v) {
  v.score = j.get<AnalysisScore>();
  v.chain_id = j.at("chain_id").get<std::string>();
  v.concept_id = j.value("concept_id", "");
  v.condition = enum_from_json(j.value("condition", json("memoryless")), kConditions,
                               "condition");
  v.template_id = j.value("template_id", "");
}

}  // namespace cxgame
