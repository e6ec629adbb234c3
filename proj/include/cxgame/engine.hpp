#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cxgame/config.hpp"
#include "cxgame/core.hpp"
#include "cxgame/io.hpp"
#include "cxgame/prompts.hpp"
#include "cxgame/provider.hpp"

namespace cxgame {

// Opening markers of the history entries embedded in with-history prompts.
inline constexpr std::string_view kHistoryCeOpen = "<history-ce ";
inline constexpr std::string_view kHistoryRepairOpen = "<history-repair ";

std::size_t count_occurrences(std::string_view text, std::string_view needle);

// Counterexample prompt. `history` must be empty for memoryless chains.
PromptPair build_ce_prompt(const PromptLibrary& prompts, const Concept& concept_,
                           std::string_view current_analysis,
                           std::span<const StepRecord> history, Condition condition);

PromptPair build_repair_prompt(const PromptLibrary& prompts, const Concept& concept_,
                               std::string_view current_analysis,
                               std::string_view counterexample,
                               std::span<const StepRecord> history, Condition condition);

// self_play: the single model. mixed: uniform draw from an RNG stream keyed
// by (schedule seed, step_index, role).
const std::string& select_model(const ModelSchedule& schedule, int step_index, Role role);

struct ChainState {
  Chain chain;
  int next_step_index = 0;

  static ChainState fresh(std::string chain_id, const Concept& concept_, Condition condition,
                          int replicate, ModelSchedule schedule);
  static ChainState from_chain(Chain chain);
};

// Everything a step needs besides the chain itself.
struct EngineContext {
  const PromptLibrary& prompts;
  ProviderRegistry& providers;
  JsonlAppender& events;
  GenerationSettings generation;
  std::chrono::milliseconds step_timeout{120000};
  std::function<std::string()> clock = utc_timestamp;
  // When set, the chain file is rewritten atomically after every step.
  std::filesystem::path chains_dir;
};

// Appends one StepRecord (CE call then repair call). Provider errors mark
// the chain failed, discard the partial step and log a failure marker.
ChainState step(ChainState state, const Concept& concept_, EngineContext& ctx);

// Advances the chain until it has `iterations` steps or fails.
Chain run_chain(ChainState state, const Concept& concept_, int iterations, EngineContext& ctx);

struct PlannedChain {
  std::string chain_id;
  std::string concept_id;
  Condition condition = Condition::memoryless;
  int replicate = 0;
  std::uint64_t seed = 0;
};

// One entry per (concept, condition, replicate), in config order.
std::vector<PlannedChain> plan_run(const RunConfig& config);

struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path events() const { return root / "events.jsonl"; }
  std::filesystem::path chains_dir() const { return root / "chains"; }
  std::filesystem::path chain_file(const std::string& id) const {
    return chains_dir() / (id + ".json");
  }
  std::filesystem::path judgments_dir() const { return root / "judgments"; }
  std::filesystem::path tags_dir() const { return root / "tags"; }
  std::filesystem::path reports_dir() const { return root / "reports"; }
};

struct RunSummary {
  std::size_t chains_total = 0;
  std::size_t chains_completed = 0;
  std::size_t chains_failed = 0;
  std::size_t chains_skipped = 0;  // already complete on disk
  std::size_t steps_executed = 0;
  std::vector<std::string> failures;  // "chain_id: message"
};

struct RunOptions {
  int parallelism = 1;
  std::function<std::string()> clock = utc_timestamp;
};

// Fresh run: writes the manifest and drives every planned chain.
RunSummary execute_run(const RunConfig& config, ProviderRegistry& providers,
                       const std::filesystem::path& run_dir, const RunOptions& options);

// Continues every running or failed chain listed in the manifest. Complete
// chains are left untouched and issue no provider calls.
RunSummary resume_run(const std::filesystem::path& run_dir, ProviderRegistry& providers,
                      const RunOptions& options);

RunConfig load_manifest_config(const std::filesystem::path& run_dir);
std::vector<PlannedChain> load_manifest_chains(const std::filesystem::path& run_dir);
std::vector<Chain> load_chains(const std::filesystem::path& run_dir);
PromptLibrary prompts_for(const RunConfig& config);

}  // namespace cxgame
