#include "cxgame/engine.hpp"

#include <atomic>
#include <exception>
#include <random>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace cxgame {

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  if (needle.empty()) return 0;
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string_view::npos;
       pos = text.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

namespace {

std::string render_history(std::span<const StepRecord> history) {
  if (history.empty()) return {};
  std::string out = "\nPrior rounds of this exchange, oldest first:\n";
  for (std::size_t i = 0; i < history.size(); ++i) {
    out += fmt::format("{}index=\"{}\">\n{}\n</history-ce>\n", kHistoryCeOpen, i + 1,
                       history[i].ce_text);
    out += fmt::format("{}index=\"{}\">\n{}\n</history-repair>\n", kHistoryRepairOpen, i + 1,
                       history[i].repair_text);
  }
  return out;
}

PromptVars base_vars(const Concept& concept_, std::string_view analysis,
                     std::span<const StepRecord> history, Condition condition) {
  if (analysis.empty()) {
    throw Error(ErrorKind::PreconditionViolation, "current analysis is empty");
  }
  if (condition == Condition::memoryless && !history.empty()) {
    throw Error(ErrorKind::PreconditionViolation, "history supplied to a memoryless prompt");
  }
  return PromptVars{{"concept", concept_.surface_form},
                    {"part_of_speech", std::string(to_string(concept_.part_of_speech))},
                    {"analysis", std::string(analysis)},
                    {"history", render_history(history)}};
}

void persist(const Chain& chain, const std::filesystem::path& dir) {
  if (dir.empty()) return;
  write_json_file(dir / (chain.chain_id + ".json"), json(chain));
}

}  // namespace

PromptPair build_ce_prompt(const PromptLibrary& prompts, const Concept& concept_,
                           std::string_view current_analysis,
                           std::span<const StepRecord> history, Condition condition) {
  return prompts.render("ce", base_vars(concept_, current_analysis, history, condition));
}

PromptPair build_repair_prompt(const PromptLibrary& prompts, const Concept& concept_,
                               std::string_view current_analysis,
                               std::string_view counterexample,
                               std::span<const StepRecord> history, Condition condition) {
  if (counterexample.empty()) {
    throw Error(ErrorKind::PreconditionViolation, "counterexample is empty");
  }
  auto vars = base_vars(concept_, current_analysis, history, condition);
  vars["counterexample"] = std::string(counterexample);
  return prompts.render("repair", vars);
}

const std::string& select_model(const ModelSchedule& schedule, int step_index, Role role) {
  if (schedule.model_ids.empty()) {
    throw Error(ErrorKind::PreconditionViolation, "schedule has no models");
  }
  if (schedule.mode == ScheduleMode::self_play) return schedule.model_ids.front();
  std::seed_seq seq{static_cast<std::uint32_t>(schedule.rng_seed),
                    static_cast<std::uint32_t>(schedule.rng_seed >> 32),
                    static_cast<std::uint32_t>(step_index),
                    static_cast<std::uint32_t>(role == Role::ce ? 0 : 1)};
  std::mt19937_64 rng(seq);
  return schedule.model_ids[rng() % schedule.model_ids.size()];
}

ChainState ChainState::fresh(std::string chain_id, const Concept& concept_, Condition condition,
                             int replicate, ModelSchedule schedule) {
  ChainState s;
  s.chain.chain_id = std::move(chain_id);
  s.chain.concept_id = concept_.id;
  s.chain.condition = condition;
  s.chain.replicate = replicate;
  s.chain.schedule = std::move(schedule);
  s.chain.analyses = {concept_.seed_analysis};
  s.chain.status = ChainStatus::running;
  return s;
}

ChainState ChainState::from_chain(Chain chain) {
  ChainState s;
  s.next_step_index = static_cast<int>(chain.steps.size());
  s.chain = std::move(chain);
  return s;
}

ChainState step(ChainState state, const Concept& concept_, EngineContext& ctx) {
  Chain& chain = state.chain;
  if (chain.status != ChainStatus::running) {
    throw Error(ErrorKind::PreconditionViolation,
                fmt::format("chain {} is not running", chain.chain_id));
  }
  const int i = state.next_step_index;
  const auto started = std::chrono::steady_clock::now();
  auto check_deadline = [&](const char* phase) {
    if (std::chrono::steady_clock::now() - started > ctx.step_timeout) {
      throw Error(ErrorKind::StepTimeout,
                  fmt::format("step {} of chain {} exceeded {} ms during {}", i, chain.chain_id,
                              ctx.step_timeout.count(), phase));
    }
  };
  const std::span<const StepRecord> history =
      chain.condition == Condition::with_history ? std::span<const StepRecord>(chain.steps)
                                                 : std::span<const StepRecord>();
  const std::string analysis = chain.analyses.back();

  StepRecord record;
  record.step_index = i;
  try {
    record.ce_model_id = select_model(chain.schedule, i, Role::ce);
    const auto ce_prompt = build_ce_prompt(ctx.prompts, concept_, analysis, history,
                                           chain.condition);
    auto ce = ctx.providers.complete(CompletionRequest{
        record.ce_model_id, ce_prompt.system, ce_prompt.user, ctx.generation.max_tokens,
        ctx.generation.temperature, RequestTag{"ce", chain.chain_id, i}.str(),
        ce_prompt.template_id});
    if (ce.text.empty()) throw Error(ErrorKind::ProviderRefusal, "empty counterexample");
    check_deadline("counterexample");
    record.ce_text = std::move(ce.text);
    record.ce_template_id = ce_prompt.template_id;
    record.ce_prompt_digest = ce_prompt.digest();
    record.ce_ts = ctx.clock();

    record.repair_model_id = select_model(chain.schedule, i, Role::repair);
    const auto repair_prompt = build_repair_prompt(ctx.prompts, concept_, analysis,
                                                   record.ce_text, history, chain.condition);
    auto repair = ctx.providers.complete(CompletionRequest{
        record.repair_model_id, repair_prompt.system, repair_prompt.user,
        ctx.generation.max_tokens, ctx.generation.temperature,
        RequestTag{"repair", chain.chain_id, i}.str(), repair_prompt.template_id});
    if (repair.text.empty()) throw Error(ErrorKind::ProviderRefusal, "empty repair");
    check_deadline("repair");
    record.repair_text = std::move(repair.text);
    record.repair_template_id = repair_prompt.template_id;
    record.repair_prompt_digest = repair_prompt.digest();
    record.repair_ts = ctx.clock();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::PreconditionViolation || e.kind() == ErrorKind::InvariantViolation) {
      throw;
    }
    spdlog::warn("chain {} failed at step {}: {}", chain.chain_id, i, e.what());
    chain.status = ChainStatus::failed;
    chain.error = e.what();
    ctx.events.append(json{{"chain_id", chain.chain_id},
                           {"step_index", i},
                           {"kind", "failure"},
                           {"error_kind", to_string(e.kind())},
                           {"error", e.what()},
                           {"ts", ctx.clock()}});
    persist(chain, ctx.chains_dir);
    return state;
  }

  ctx.events.append(json{{"chain_id", chain.chain_id},
                         {"step_index", i},
                         {"kind", "ce"},
                         {"text", record.ce_text},
                         {"model_id", record.ce_model_id},
                         {"prompt_digest", record.ce_prompt_digest},
                         {"template_id", record.ce_template_id},
                         {"ts", record.ce_ts}});
  ctx.events.append(json{{"chain_id", chain.chain_id},
                         {"step_index", i},
                         {"kind", "repair"},
                         {"text", record.repair_text},
                         {"model_id", record.repair_model_id},
                         {"prompt_digest", record.repair_prompt_digest},
                         {"template_id", record.repair_template_id},
                         {"ts", record.repair_ts}});
  chain.analyses.push_back(record.repair_text);
  chain.steps.push_back(std::move(record));
  state.next_step_index = i + 1;
  persist(chain, ctx.chains_dir);
  return state;
}

Chain run_chain(ChainState state, const Concept& concept_, int iterations, EngineContext& ctx) {
  if (iterations < 1) throw Error(ErrorKind::ConfigError, "iterations must be >= 1");
  if (state.chain.status == ChainStatus::complete &&
      static_cast<int>(state.chain.steps.size()) >= iterations) {
    return std::move(state.chain);
  }
  state.chain.status = ChainStatus::running;
  state.chain.error.clear();
  persist(state.chain, ctx.chains_dir);
  while (state.next_step_index < iterations) {
    state = step(std::move(state), concept_, ctx);
    if (state.chain.status == ChainStatus::failed) return std::move(state.chain);
  }
  state.chain.status = ChainStatus::complete;
  persist(state.chain, ctx.chains_dir);
  return std::move(state.chain);
}

std::vector<PlannedChain> plan_run(const RunConfig& config) {
  std::vector<PlannedChain> out;
  for (const auto& c : config.concepts) {
    for (auto condition : config.conditions) {
      for (int rep = 0; rep < config.chains_per_condition; ++rep) {
        PlannedChain p;
        p.chain_id = make_chain_id(c.id, condition, rep, config.rng_seed);
        p.concept_id = c.id;
        p.condition = condition;
        p.replicate = rep;
        p.seed = derive_seed(config.rng_seed, "chain:" + p.chain_id);
        out.push_back(std::move(p));
      }
    }
  }
  return out;
}

PromptLibrary prompts_for(const RunConfig& config) {
  return config.prompts_dir.empty() ? PromptLibrary::embedded()
                                    : PromptLibrary::with_overrides(config.prompts_dir);
}

namespace {

json planned_to_json(const PlannedChain& p) {
  return json{{"chain_id", p.chain_id},
              {"concept_id", p.concept_id},
              {"condition", to_string(p.condition)},
              {"replicate", p.replicate},
              {"seed", p.seed},
              {"file", "chains/" + p.chain_id + ".json"}};
}

PlannedChain planned_from_json(const json& j) {
  PlannedChain p;
  p.chain_id = j.at("chain_id").get<std::string>();
  p.concept_id = j.at("concept_id").get<std::string>();
  p.condition = parse_condition(j.at("condition").get<std::string>()).value();
  p.replicate = j.at("replicate").get<int>();
  p.seed = j.at("seed").get<std::uint64_t>();
  return p;
}

RunSummary drive(const RunConfig& config, const std::vector<PlannedChain>& plan,
                 ProviderRegistry& providers, const RunLayout& layout,
                 const RunOptions& options) {
  const auto prompts = prompts_for(config);
  JsonlAppender events(layout.events());
  std::filesystem::create_directories(layout.chains_dir());

  // Load and validate everything before issuing any provider call.
  std::vector<ChainState> states;
  std::vector<std::size_t> todo;
  RunSummary summary;
  summary.chains_total = plan.size();
  for (const auto& p : plan) {
    const auto& concept_ = config.concept_by_id(p.concept_id);
    const auto file = layout.chain_file(p.chain_id);
    ModelSchedule schedule = config.schedule;
    schedule.rng_seed = p.seed;
    if (std::filesystem::exists(file)) {
      Chain chain;
      try {
        chain = read_json_file(file).get<Chain>();
      } catch (const std::exception& e) {
        throw Error(ErrorKind::CorruptState,
                    fmt::format("chain {} cannot be read: {}", p.chain_id, e.what()), p.chain_id);
      }
      if (auto v = validate_chain(chain, concept_); !v.empty()) {
        throw Error(ErrorKind::CorruptState, fmt::format("chain {}: {}", p.chain_id, v.front()),
                    p.chain_id);
      }
      if (chain.status == ChainStatus::complete &&
          static_cast<int>(chain.steps.size()) >= config.iterations) {
        ++summary.chains_skipped;
        ++summary.chains_completed;
        states.push_back(ChainState::from_chain(std::move(chain)));
        continue;
      }
      states.push_back(ChainState::from_chain(std::move(chain)));
    } else {
      states.push_back(ChainState::fresh(p.chain_id, concept_, p.condition, p.replicate, schedule));
    }
    todo.push_back(states.size() - 1);
  }

  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> steps{0};
  std::mutex result_mutex;
  std::exception_ptr first_exception;
  auto worker = [&] {
    EngineContext ctx{prompts, providers, events, config.generation,
                      std::chrono::milliseconds(config.step_timeout_ms), options.clock,
                      layout.chains_dir()};
    for (std::size_t k = next++; k < todo.size(); k = next++) {
      auto& state = states[todo[k]];
      const auto before = state.chain.steps.size();
      try {
        const auto& concept_ = config.concept_by_id(state.chain.concept_id);
        Chain done = run_chain(std::move(state), concept_, config.iterations, ctx);
        steps += done.steps.size() - before;
        std::lock_guard lock(result_mutex);
        if (done.status == ChainStatus::complete) {
          ++summary.chains_completed;
        } else {
          ++summary.chains_failed;
          summary.failures.push_back(done.chain_id + ": " + done.error);
        }
      } catch (...) {
        std::lock_guard lock(result_mutex);
        if (!first_exception) first_exception = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(options.parallelism, static_cast<int>(todo.size())));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (first_exception) std::rethrow_exception(first_exception);
  summary.steps_executed = steps;
  std::sort(summary.failures.begin(), summary.failures.end());
  return summary;
}

}  // namespace

RunSummary execute_run(const RunConfig& config, ProviderRegistry& providers,
                       const std::filesystem::path& run_dir, const RunOptions& options) {
  if (auto v = config.violations(); !v.empty()) {
    throw Error(ErrorKind::ConfigError, v.front());
  }
  for (const auto& id : config.referenced_models()) {
    if (!providers.has(id)) {
      throw Error(ErrorKind::UnknownModel, fmt::format("model '{}' is not registered", id));
    }
  }
  const RunLayout layout{run_dir};
  const auto plan = plan_run(config);
  const auto snapshot = run_config_to_json(config);
  if (std::filesystem::exists(layout.manifest())) {
    const auto existing = read_json_file(layout.manifest());
    if (existing.value("config", json()) != snapshot) {
      throw Error(ErrorKind::ConfigError,
                  fmt::format("{} already holds a run with a different config; use resume or a "
                              "fresh --run-dir",
                              run_dir.string()));
    }
    return drive(config, plan, providers, layout, options);
  }
  std::filesystem::create_directories(run_dir);
  json chains = json::array();
  for (const auto& p : plan) chains.push_back(planned_to_json(p));
  write_json_file(layout.manifest(), json{{"run_id", config.run_id},
                                          {"created_at", options.clock()},
                                          {"config", snapshot},
                                          {"chains", chains},
                                          {"prompt_templates", prompts_for(config).fingerprints()}});
  return drive(config, plan, providers, layout, options);
}

RunConfig load_manifest_config(const std::filesystem::path& run_dir) {
  const RunLayout layout{run_dir};
  if (!std::filesystem::exists(layout.manifest())) {
    throw Error(ErrorKind::MissingInputs, "no manifest.json in " + run_dir.string(), "run");
  }
  return run_config_from_json(read_json_file(layout.manifest()).at("config"));
}

std::vector<PlannedChain> load_manifest_chains(const std::filesystem::path& run_dir) {
  const RunLayout layout{run_dir};
  if (!std::filesystem::exists(layout.manifest())) {
    throw Error(ErrorKind::MissingInputs, "no manifest.json in " + run_dir.string(), "run");
  }
  std::vector<PlannedChain> out;
  const auto manifest = read_json_file(layout.manifest());
  for (const auto& j : manifest.at("chains")) {
    out.push_back(planned_from_json(j));
  }
  return out;
}

std::vector<Chain> load_chains(const std::filesystem::path& run_dir) {
  const RunLayout layout{run_dir};
  std::vector<Chain> out;
  for (const auto& p : load_manifest_chains(run_dir)) {
    const auto file = layout.chain_file(p.chain_id);
    if (!std::filesystem::exists(file)) continue;
    try {
      out.push_back(read_json_file(file).get<Chain>());
    } catch (const json::exception& e) {
      throw Error(ErrorKind::CorruptState, fmt::format("chain {}: {}", p.chain_id, e.what()),
                  p.chain_id);
    }
  }
  return out;
}

RunSummary resume_run(const std::filesystem::path& run_dir, ProviderRegistry& providers,
                      const RunOptions& options) {
  const auto config = load_manifest_config(run_dir);
  const auto plan = load_manifest_chains(run_dir);
  return drive(config, plan, providers, RunLayout{run_dir}, options);
}

}  // namespace cxgame
