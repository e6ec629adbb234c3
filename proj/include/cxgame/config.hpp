#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cxgame/core.hpp"
#include "cxgame/provider.hpp"

namespace cxgame {

// A position selection: a named scheme ("all", "paper-analysis",
// "paper-ce-mixed") or an explicit list.
struct PositionSpec {
  std::string scheme = "all";
  std::vector<int> explicit_positions;

  static PositionSpec parse(std::string_view text);  // "all" or "0,1,2"
  std::string str() const;
};

struct JudgeSettings {
  std::string model_id;
  PositionSpec ce_positions{"all", {}};
  PositionSpec analysis_positions{"paper-analysis", {}};
  int parse_retries = 3;
  double temperature = 0.0;
  int max_tokens = 1024;
};

struct TaggingSettings {
  std::string model_id;
  bool per_chain_extraction = false;
  int parse_retries = 3;
  double temperature = 0.0;
  int max_tokens = 2048;
};

struct GenerationSettings {
  double temperature = 0.7;
  int max_tokens = 1024;
};

struct ProviderEntry {
  std::string model_id;
  std::string adapter;  // "openai", "anthropic" or "mock"
  std::string endpoint;
  std::string remote_model;
  std::string api_key_env;
  int max_concurrency = 4;
};

struct MockSettings {
  bool enabled = false;
  SyntheticScript script;
};

struct RunConfig {
  std::string run_id = "run";
  std::vector<Concept> concepts;
  std::vector<Condition> conditions{Condition::memoryless, Condition::with_history};
  int chains_per_condition = 3;
  int iterations = 10;
  ModelSchedule schedule;  // rng_seed unused; chain seeds derive from rng_seed below
  GenerationSettings generation;
  JudgeSettings judge;
  TaggingSettings tagging;
  std::uint64_t rng_seed = 0;
  std::uint64_t stats_seed = 0;
  int parallelism = 4;
  int step_timeout_ms = 120000;
  RetryPolicy retry;
  std::string prompts_dir;  // empty: embedded templates
  std::vector<ProviderEntry> providers;
  MockSettings mock;

  // Empty when the config is usable.
  std::vector<std::string> violations() const;
  // Every model id a run with this config may call.
  std::vector<std::string> referenced_models() const;
  const Concept& concept_by_id(std::string_view id) const;
};

// Parses a .toml or .json config. `concepts_file` and `providers_file`
// entries are resolved relative to the config's directory.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig run_config_from_json(const json& j);
json run_config_to_json(const RunConfig& config);

// TOML text to JSON (tables become objects, arrays stay arrays).
json toml_to_json(std::string_view toml_text, std::string_view source_name = "config");

// Registers a backend for every referenced model: the synthetic mock when
// [mock] is enabled, otherwise the configured HTTP providers.
std::unique_ptr<ProviderRegistry> build_registry(const RunConfig& config);

}  // namespace cxgame
