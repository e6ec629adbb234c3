#include "cxgame/config.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <toml.hpp>

#include "cxgame/io.hpp"

namespace cxgame {

PositionSpec PositionSpec::parse(std::string_view text) {
  PositionSpec out;
  if (text.empty()) throw Error(ErrorKind::ConfigError, "empty position spec");
  if (text.find_first_not_of("0123456789, ") != std::string_view::npos) {
    out.scheme = std::string(text);
    return out;
  }
  out.scheme = "explicit";
  std::string item;
  std::stringstream ss{std::string(text)};
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove(item.begin(), item.end(), ' '), item.end());
    if (item.empty()) continue;
    out.explicit_positions.push_back(std::stoi(item));
  }
  if (out.explicit_positions.empty()) {
    throw Error(ErrorKind::ConfigError, fmt::format("no positions in '{}'", text));
  }
  return out;
}

std::string PositionSpec::str() const {
  if (scheme != "explicit") return scheme;
  std::string out;
  for (std::size_t i = 0; i < explicit_positions.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(explicit_positions[i]);
  }
  return out;
}

namespace {

constexpr std::array kKnownSchemes{"all", "paper-analysis", "paper-ce-mixed", "explicit"};

PositionSpec positions_from_json(const json& j) {
  if (j.is_string()) return PositionSpec::parse(j.get<std::string>());
  if (j.is_array()) {
    PositionSpec out;
    out.scheme = "explicit";
    out.explicit_positions = j.get<std::vector<int>>();
    return out;
  }
  throw Error(ErrorKind::ConfigError, "positions must be a scheme name or an integer list");
}

json positions_to_json(const PositionSpec& p) {
  if (p.scheme == "explicit") return json(p.explicit_positions);
  return json(p.scheme);
}

Concept concept_from_json(const json& j) {
  Concept c;
  c.id = j.at("id").get<std::string>();
  c.surface_form = j.value("surface_form", c.id);
  const auto pos = j.value("part_of_speech", std::string{});
  auto parsed = parse_part_of_speech(pos);
  if (!parsed) {
    throw Error(ErrorKind::ConfigError,
                fmt::format("concept '{}' has part_of_speech '{}' (noun|verb)", c.id, pos));
  }
  c.part_of_speech = *parsed;
  if (j.contains("seed_analysis")) c.seed_analysis = j.at("seed_analysis").get<std::string>();
  else c.seed_analysis = j.value("seed", std::string{});
  return c;
}

std::vector<ProviderEntry> providers_from_json(const json& j) {
  std::vector<ProviderEntry> out;
  for (const auto& [id, v] : j.items()) {
    ProviderEntry p;
    p.model_id = id;
    p.adapter = v.value("adapter", "openai");
    p.endpoint = v.value("endpoint", "");
    p.remote_model = v.value("remote_model", id);
    p.api_key_env = v.value("api_key_env", "");
    p.max_concurrency = v.value("max_concurrency", 4);
    out.push_back(std::move(p));
  }
  return out;
}

void merge_file_section(json& root, const std::filesystem::path& base, const char* file_key,
                        const char* section) {
  if (!root.contains(file_key)) return;
  const auto path = base / root.at(file_key).get<std::string>();
  const auto text = read_text_file(path);
  json extra = path.extension() == ".json" ? json::parse(text)
                                           : toml_to_json(text, path.string());
  if (!extra.contains(section)) {
    throw Error(ErrorKind::ConfigError, fmt::format("{} has no [{}] section", path.string(), section));
  }
  if (std::string_view(section) == "concepts") {
    if (!root.contains("concepts")) root["concepts"] = json::array();
    for (auto& c : extra["concepts"]) root["concepts"].push_back(c);
  } else {
    if (!root.contains(section)) root[section] = json::object();
    for (auto& [k, v] : extra[section].items()) root[section][k] = v;
  }
  root.erase(file_key);
}

}  // namespace

json toml_to_json(std::string_view toml_text, std::string_view source_name) {
  toml::table table;
  try {
    table = toml::parse(toml_text, source_name);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << e;
    throw Error(ErrorKind::ConfigError, msg.str());
  }
  std::ostringstream ss;
  ss << toml::json_formatter{table};
  return json::parse(ss.str());
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    c.run_id = j.value("run_id", c.run_id);
    c.rng_seed = j.value("seed", std::uint64_t{0});
    c.stats_seed = j.value("stats_seed", derive_seed(c.rng_seed, "stats"));
    c.iterations = j.value("iterations", c.iterations);
    c.chains_per_condition = j.value("chains_per_condition", c.chains_per_condition);
    c.parallelism = j.value("parallelism", c.parallelism);
    if (j.contains("step_timeout_ms")) c.step_timeout_ms = j.at("step_timeout_ms").get<int>();
    else if (j.contains("step_timeout_s")) c.step_timeout_ms = j.at("step_timeout_s").get<int>() * 1000;
    c.prompts_dir = j.value("prompts_dir", "");

    if (j.contains("conditions")) {
      c.conditions.clear();
      for (const auto& s : j.at("conditions")) {
        auto cond = parse_condition(s.get<std::string>());
        if (!cond) throw Error(ErrorKind::ConfigError, "unknown condition " + s.dump());
        c.conditions.push_back(*cond);
      }
    }
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      auto mode = parse_schedule_mode(s.value("mode", "self_play"));
      if (!mode) throw Error(ErrorKind::ConfigError, "unknown schedule mode");
      c.schedule.mode = *mode;
      c.schedule.model_ids = s.value("models", std::vector<std::string>{});
    }
    if (j.contains("generation")) {
      const auto& g = j.at("generation");
      c.generation.temperature = g.value("temperature", c.generation.temperature);
      c.generation.max_tokens = g.value("max_tokens", c.generation.max_tokens);
    }
    if (j.contains("judge")) {
      const auto& g = j.at("judge");
      c.judge.model_id = g.value("model", "");
      if (g.contains("ce_positions")) c.judge.ce_positions = positions_from_json(g.at("ce_positions"));
      if (g.contains("analysis_positions")) {
        c.judge.analysis_positions = positions_from_json(g.at("analysis_positions"));
      }
      c.judge.parse_retries = g.value("parse_retries", c.judge.parse_retries);
      c.judge.temperature = g.value("temperature", c.judge.temperature);
      c.judge.max_tokens = g.value("max_tokens", c.judge.max_tokens);
    }
    if (j.contains("tagging")) {
      const auto& g = j.at("tagging");
      c.tagging.model_id = g.value("model", "");
      c.tagging.per_chain_extraction = g.value("per_chain", false);
      c.tagging.parse_retries = g.value("parse_retries", c.tagging.parse_retries);
      c.tagging.temperature = g.value("temperature", c.tagging.temperature);
      c.tagging.max_tokens = g.value("max_tokens", c.tagging.max_tokens);
    }
    if (j.contains("retry")) {
      const auto& r = j.at("retry");
      c.retry.max_attempts = r.value("max_attempts", c.retry.max_attempts);
      c.retry.base_backoff_ms = r.value("base_backoff_ms", c.retry.base_backoff_ms);
      c.retry.max_backoff_ms = r.value("max_backoff_ms", c.retry.max_backoff_ms);
    }
    if (j.contains("concepts")) {
      for (const auto& cj : j.at("concepts")) c.concepts.push_back(concept_from_json(cj));
    }
    if (j.contains("providers")) c.providers = providers_from_json(j.at("providers"));
    if (j.contains("mock")) {
      const auto& m = j.at("mock");
      c.mock.enabled = m.value("enabled", true);
      c.mock.script.seed = m.value("seed", c.rng_seed);
      if (m.contains("ce_valid_rate")) {
        c.mock.script.ce_valid_rate = m.at("ce_valid_rate").get<std::vector<double>>();
      }
      c.mock.script.subconcept_count = m.value("subconcept_count", c.mock.script.subconcept_count);
      c.mock.script.presence_rate = m.value("presence_rate", c.mock.script.presence_rate);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ConfigError, e.what());
  }
  return c;
}

json run_config_to_json(const RunConfig& c) {
  json j;
  j["run_id"] = c.run_id;
  j["seed"] = c.rng_seed;
  j["stats_seed"] = c.stats_seed;
  j["iterations"] = c.iterations;
  j["chains_per_condition"] = c.chains_per_condition;
  j["parallelism"] = c.parallelism;
  j["step_timeout_ms"] = c.step_timeout_ms;
  j["prompts_dir"] = c.prompts_dir;
  j["conditions"] = json::array();
  for (auto cond : c.conditions) j["conditions"].push_back(to_string(cond));
  j["schedule"] = {{"mode", to_string(c.schedule.mode)}, {"models", c.schedule.model_ids}};
  j["generation"] = {{"temperature", c.generation.temperature},
                     {"max_tokens", c.generation.max_tokens}};
  j["judge"] = {{"model", c.judge.model_id},
                {"ce_positions", positions_to_json(c.judge.ce_positions)},
                {"analysis_positions", positions_to_json(c.judge.analysis_positions)},
                {"parse_retries", c.judge.parse_retries},
                {"temperature", c.judge.temperature},
                {"max_tokens", c.judge.max_tokens}};
  j["tagging"] = {{"model", c.tagging.model_id},
                  {"per_chain", c.tagging.per_chain_extraction},
                  {"parse_retries", c.tagging.parse_retries},
                  {"temperature", c.tagging.temperature},
                  {"max_tokens", c.tagging.max_tokens}};
  j["retry"] = {{"max_attempts", c.retry.max_attempts},
                {"base_backoff_ms", c.retry.base_backoff_ms},
                {"max_backoff_ms", c.retry.max_backoff_ms}};
  j["concepts"] = c.concepts;
  j["providers"] = json::object();
  for (const auto& p : c.providers) {
    j["providers"][p.model_id] = {{"adapter", p.adapter},
                                  {"endpoint", p.endpoint},
                                  {"remote_model", p.remote_model},
                                  {"api_key_env", p.api_key_env},
                                  {"max_concurrency", p.max_concurrency}};
  }
  if (c.mock.enabled) {
    j["mock"] = {{"enabled", true},
                 {"seed", c.mock.script.seed},
                 {"ce_valid_rate", c.mock.script.ce_valid_rate},
                 {"subconcept_count", c.mock.script.subconcept_count},
                 {"presence_rate", c.mock.script.presence_rate}};
  }
  return j;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const auto text = read_text_file(path);
  json root;
  if (path.extension() == ".json") {
    try {
      root = json::parse(text);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::ConfigError, e.what());
    }
  } else {
    root = toml_to_json(text, path.string());
  }
  const auto base = path.parent_path();
  merge_file_section(root, base, "concepts_file", "concepts");
  merge_file_section(root, base, "providers_file", "providers");
  if (root.contains("prompts_dir") && !root["prompts_dir"].get<std::string>().empty()) {
    const std::filesystem::path dir = root["prompts_dir"].get<std::string>();
    if (dir.is_relative()) root["prompts_dir"] = (base / dir).lexically_normal().string();
  }
  return run_config_from_json(root);
}

std::vector<std::string> RunConfig::violations() const {
  std::vector<std::string> out;
  if (iterations < 1) out.emplace_back("iterations must be >= 1");
  if (chains_per_condition < 1) out.emplace_back("chains_per_condition must be >= 1");
  if (parallelism < 1) out.emplace_back("parallelism must be >= 1");
  if (step_timeout_ms < 1) out.emplace_back("step timeout must be positive");
  if (concepts.empty()) out.emplace_back("no concepts configured");
  if (conditions.empty()) out.emplace_back("no conditions configured");
  std::set<Condition> conds(conditions.begin(), conditions.end());
  if (conds.size() != conditions.size()) out.emplace_back("duplicate condition");
  std::set<std::string> ids;
  for (const auto& c : concepts) {
    if (c.id.empty()) out.emplace_back("concept with empty id");
    if (!ids.insert(c.id).second) out.push_back(fmt::format("duplicate concept id '{}'", c.id));
    if (c.seed_analysis.empty()) {
      out.push_back(fmt::format("concept '{}' has an empty seed analysis", c.id));
    }
  }
  for (auto& v : schedule.violations()) out.push_back("schedule: " + v);
  for (auto& v : retry.violations()) out.push_back("retry: " + v);
  if (generation.max_tokens < 1 || judge.max_tokens < 1 || tagging.max_tokens < 1) {
    out.emplace_back("max_tokens must be >= 1");
  }
  if (generation.temperature < 0 || judge.temperature < 0 || tagging.temperature < 0) {
    out.emplace_back("temperature must be >= 0");
  }
  for (const auto* spec : {&judge.ce_positions, &judge.analysis_positions}) {
    if (std::find_if(kKnownSchemes.begin(), kKnownSchemes.end(),
                     [&](const char* s) { return spec->scheme == s; }) == kKnownSchemes.end()) {
      out.push_back(fmt::format("unknown position scheme '{}'", spec->scheme));
    }
  }
  if (!mock.enabled) {
    std::set<std::string> registered;
    for (const auto& p : providers) registered.insert(p.model_id);
    for (const auto& id : referenced_models()) {
      if (!registered.count(id)) {
        out.push_back(fmt::format("model '{}' has no provider entry", id));
      }
    }
  }
  return out;
}

std::vector<std::string> RunConfig::referenced_models() const {
  std::set<std::string> ids(schedule.model_ids.begin(), schedule.model_ids.end());
  if (!judge.model_id.empty()) ids.insert(judge.model_id);
  if (!tagging.model_id.empty()) ids.insert(tagging.model_id);
  return {ids.begin(), ids.end()};
}

const Concept& RunConfig::concept_by_id(std::string_view id) const {
  for (const auto& c : concepts) {
    if (c.id == id) return c;
  }
  throw Error(ErrorKind::ConfigError, fmt::format("unknown concept '{}'", id));
}

std::unique_ptr<ProviderRegistry> build_registry(const RunConfig& config) {
  auto registry = std::make_unique<ProviderRegistry>(config.retry);
  if (config.mock.enabled) {
    auto backend = MockBackend::with_responder(make_synthetic_responder(config.mock.script));
    for (const auto& id : config.referenced_models()) {
      registry->add(id, backend, std::max(1, config.parallelism));
    }
    return registry;
  }
  for (const auto& p : config.providers) {
    if (p.adapter == "mock") {
      registry->add(p.model_id,
                    MockBackend::with_responder(make_synthetic_responder(config.mock.script)),
                    p.max_concurrency);
      continue;
    }
    auto adapter = parse_http_adapter(p.adapter);
    if (!adapter) {
      throw Error(ErrorKind::ConfigError,
                  fmt::format("model '{}' has unknown adapter '{}'", p.model_id, p.adapter));
    }
    if (p.endpoint.empty()) {
      throw Error(ErrorKind::ConfigError, fmt::format("model '{}' has no endpoint", p.model_id));
    }
    HttpEndpoint ep{*adapter, p.endpoint, p.remote_model, p.api_key_env,
                    std::chrono::milliseconds(config.step_timeout_ms)};
    registry->add(p.model_id, std::make_shared<HttpBackend>(ep), p.max_concurrency);
  }
  return registry;
}

}  // namespace cxgame
