#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cxgame/config.hpp"
#include "cxgame/core.hpp"
#include "cxgame/prompts.hpp"
#include "cxgame/provider.hpp"

namespace cxgame {

// Default CE positions for long mixed chains, front-loaded.
inline constexpr int kFrontLoadedCePositions[] = {0,  1,  2,  3,  4,  5,  7, 10,
                                                 14, 19, 24, 29, 34, 39, 49};
inline constexpr int kAnalysisCheckpoints[] = {0, 1, 2, 5, 10, 20, 30, 40, 49};

// Positions in [0, total) selected by `spec`, sorted and unique.
std::vector<int> sample_positions(int total, const PositionSpec& spec);
std::vector<int> sample_positions(int total, std::string_view scheme);

struct ParsedVerdict {
  VerdictCategory category = VerdictCategory::invalid_unclear;
  int importance = 0;
  std::string rationale;
};

struct ParsedScores {
  int accuracy = 0;
  int conciseness = 0;
  std::string rationale;
};

// Parse the fenced ```verdict / ```scores blocks. Failures throw
// UnparsableVerdict with the raw text kept in Error::detail().
ParsedVerdict parse_verdict(std::string_view raw);
ParsedScores parse_scores(std::string_view raw);

struct JudgeContext {
  const PromptLibrary& prompts;
  ProviderRegistry& providers;
  std::string judge_model_id;
  int parse_retries = 3;  // extra attempts after the first unparsable reply
  double temperature = 0.0;
  int max_tokens = 1024;
};

// `scope`/`index` only label the request (chain id and step/position).
Verdict judge_counterexample(const Concept& concept_, std::string_view analysis,
                             std::string_view ce_text, JudgeContext& ctx,
                             std::string_view scope = "adhoc", int index = 0);

AnalysisScore judge_analysis(const Concept& concept_, std::string_view analysis, int position,
                             JudgeContext& ctx, std::string_view scope = "adhoc");

struct JudgeRunOptions {
  std::optional<std::string> judge_model_id;          // overrides config
  std::optional<PositionSpec> ce_positions;           // overrides config
  std::optional<PositionSpec> analysis_positions;     // overrides config
  bool force = false;  // re-judge keys already on disk
  int parallelism = 1;
};

struct JudgeRunSummary {
  std::size_t ce_judged = 0;
  std::size_t ce_reused = 0;
  std::size_t analysis_judged = 0;
  std::size_t analysis_reused = 0;
  std::size_t failures = 0;  // recorded in judgments/failures.jsonl
};

// Judges every complete chain of a run and writes judgments/ce.jsonl and
// judgments/analysis.jsonl, sorted by key. Keys already present for the
// same judge model and template are reused without provider calls.
JudgeRunSummary judge_run(const std::filesystem::path& run_dir, ProviderRegistry& providers,
                          const JudgeRunOptions& options);

std::vector<CeJudgment> load_ce_judgments(const std::filesystem::path& path);
std::vector<AnalysisJudgment> load_analysis_judgments(const std::filesystem::path& path);

}  // namespace cxgame
