#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cxgame/stats.hpp"

namespace cxgame {

struct ReportOptions {
  std::uint64_t stats_seed = 0;
  int resamples = 2000;
  double level = 0.95;
};

struct ReportOutcome {
  std::vector<std::filesystem::path> written;  // relative to reports/
  std::vector<std::string> missing_stages;     // "judgments", "tags"
};

// Writes every figure-data CSV plus summary.json and manifest.json under
// <run_dir>/reports. Reports whose stage is absent are skipped and named in
// missing_stages; the rest are still written. Output carries no
// timestamps, so reruns are byte-identical.
ReportOutcome write_reports(const std::filesystem::path& run_dir, const ReportOptions& options);

// Human ratings from every annotation set under <run_dir>/annotation,
// unblinded and merged.
RatingTable collect_human_ratings(const std::filesystem::path& run_dir);

struct AgreementInputs {
  RatingTable table;
  std::vector<std::string> humans;
  std::vector<std::string> models;
};

// Humans are the raters of `ratings` that are not judge models.
AgreementInputs merge_agreement_inputs(const RatingTable& ratings,
                                       const std::vector<CeJudgment>& judgments);

std::string validity_by_position_csv(const std::vector<CeJudgment>& judgments,
                                     const std::vector<int>& requested = {});
std::string validity_by_concept_csv(const std::vector<CeJudgment>& judgments);
std::string length_series_csv(const std::vector<Chain>& chains);
std::string score_series_csv(const std::vector<AnalysisJudgment>& judgments);

}  // namespace cxgame
