#include "cxgame/judge.hpp"

#include <algorithm>
#include <atomic>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cxgame/engine.hpp"
#include "cxgame/io.hpp"

namespace cxgame {

std::vector<int> sample_positions(int total, const PositionSpec& spec) {
  if (total < 1) throw Error(ErrorKind::PreconditionViolation, "total_iterations must be >= 1");
  std::vector<int> candidates;
  if (spec.scheme == "all") {
    for (int i = 0; i < total; ++i) candidates.push_back(i);
  } else if (spec.scheme == "paper-analysis") {
    candidates.assign(std::begin(kAnalysisCheckpoints), std::end(kAnalysisCheckpoints));
  } else if (spec.scheme == "paper-ce-mixed") {
    candidates.assign(std::begin(kFrontLoadedCePositions), std::end(kFrontLoadedCePositions));
  } else if (spec.scheme == "explicit") {
    candidates = spec.explicit_positions;
  } else {
    throw Error(ErrorKind::ConfigError, fmt::format("unknown position scheme '{}'", spec.scheme));
  }
  std::set<int> kept;
  for (int p : candidates) {
    if (p >= 0 && p < total) kept.insert(p);
  }
  return {kept.begin(), kept.end()};
}

std::vector<int> sample_positions(int total, std::string_view scheme) {
  return sample_positions(total, PositionSpec::parse(scheme));
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void unparsable(std::string_view raw, const std::string& why) {
  throw Error(ErrorKind::UnparsableVerdict, why, std::string(raw));
}

// Key/value lines of the first ```<name> fenced block. Lines that are not
// "key: value" continue the previous value.
std::map<std::string, std::string> fenced_fields(std::string_view raw, std::string_view name,
                                                 std::initializer_list<std::string_view> keys) {
  const std::string open = "```" + std::string(name);
  auto start = raw.find(open);
  if (start == std::string_view::npos) unparsable(raw, fmt::format("no ```{} block", name));
  start = raw.find('\n', start);
  if (start == std::string_view::npos) unparsable(raw, "unterminated block");
  const auto end = raw.find("```", start);
  if (end == std::string_view::npos) unparsable(raw, "unterminated block");
  const auto body = raw.substr(start + 1, end - start - 1);

  std::map<std::string, std::string> out;
  std::string current;
  std::size_t pos = 0;
  while (pos <= body.size()) {
    auto eol = body.find('\n', pos);
    if (eol == std::string_view::npos) eol = body.size();
    const auto line = body.substr(pos, eol - pos);
    pos = eol + 1;
    const auto colon = line.find(':');
    bool is_key = false;
    if (colon != std::string_view::npos) {
      const auto key = trim(line.substr(0, colon));
      if (std::find(keys.begin(), keys.end(), key) != keys.end()) {
        if (out.count(key)) unparsable(raw, fmt::format("duplicate key '{}'", key));
        out[key] = trim(line.substr(colon + 1));
        current = key;
        is_key = true;
      }
    }
    if (!is_key) {
      const auto text = trim(line);
      if (text.empty()) continue;
      if (current.empty()) unparsable(raw, fmt::format("unexpected line '{}'", text));
      out[current] += (out[current].empty() ? "" : " ") + text;
    }
  }
  return out;
}

int score_1_to_5(std::string_view raw, const std::string& value, const char* what) {
  if (value.size() != 1 || value[0] < '1' || value[0] > '5') {
    unparsable(raw, fmt::format("{} '{}' is not an integer in 1-5", what, value));
  }
  return value[0] - '0';
}

const std::string& require(std::string_view raw, const std::map<std::string, std::string>& f,
                           const char* key) {
  auto it = f.find(key);
  if (it == f.end() || it->second.empty()) unparsable(raw, fmt::format("missing {}", key));
  return it->second;
}

PromptVars judge_vars(const Concept& concept_, std::string_view analysis) {
  if (analysis.empty()) throw Error(ErrorKind::PreconditionViolation, "analysis is empty");
  return PromptVars{{"concept", concept_.surface_form},
                    {"part_of_speech", std::string(to_string(concept_.part_of_speech))},
                    {"analysis", std::string(analysis)}};
}

// Calls the judge, re-asking with a format reminder until `parse` accepts.
template <typename Parsed, typename ParseFn>
Parsed ask_until_parsed(JudgeContext& ctx, const PromptPair& prompt, const RequestTag& tag,
                        ParseFn parse) {
  const auto& reminder = ctx.prompts.get("format_reminder");
  std::optional<Error> last;
  for (int attempt = 0; attempt <= ctx.parse_retries; ++attempt) {
    std::string user = prompt.user;
    if (attempt > 0) user += "\n\n" + reminder.user;
    auto result = ctx.providers.complete(CompletionRequest{
        ctx.judge_model_id, prompt.system, user, ctx.max_tokens, ctx.temperature, tag.str(),
        prompt.template_id});
    try {
      return parse(result.text);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::UnparsableVerdict) throw;
      spdlog::warn("judge reply for {} unparsable (attempt {}): {}", tag.str(), attempt + 1,
                   e.what());
      last = e;
    }
  }
  throw *last;
}

}  // namespace

ParsedVerdict parse_verdict(std::string_view raw) {
  const auto f = fenced_fields(raw, "verdict", {"category", "importance", "rationale"});
  ParsedVerdict out;
  const auto& category = require(raw, f, "category");
  auto parsed = parse_category(category);
  if (!parsed) unparsable(raw, fmt::format("unknown category '{}'", category));
  out.category = *parsed;
  out.importance = score_1_to_5(raw, require(raw, f, "importance"), "importance");
  out.rationale = require(raw, f, "rationale");
  return out;
}

ParsedScores parse_scores(std::string_view raw) {
  const auto f = fenced_fields(raw, "scores", {"accuracy", "conciseness", "rationale"});
  ParsedScores out;
  out.accuracy = score_1_to_5(raw, require(raw, f, "accuracy"), "accuracy");
  out.conciseness = score_1_to_5(raw, require(raw, f, "conciseness"), "conciseness");
  if (auto it = f.find("rationale"); it != f.end()) out.rationale = it->second;
  return out;
}

Verdict judge_counterexample(const Concept& concept_, std::string_view analysis,
                             std::string_view ce_text, JudgeContext& ctx, std::string_view scope,
                             int index) {
  if (ce_text.empty()) throw Error(ErrorKind::PreconditionViolation, "counterexample is empty");
  auto vars = judge_vars(concept_, analysis);
  vars["counterexample"] = std::string(ce_text);
  const auto prompt = ctx.prompts.render("judge_ce", vars);
  const auto parsed = ask_until_parsed<ParsedVerdict>(
      ctx, prompt, RequestTag{"judge_ce", std::string(scope), index}, parse_verdict);
  return make_verdict(parsed.category, parsed.rationale, parsed.importance);
}

AnalysisScore judge_analysis(const Concept& concept_, std::string_view analysis, int position,
                             JudgeContext& ctx, std::string_view scope) {
  const auto prompt = ctx.prompts.render("judge_analysis", judge_vars(concept_, analysis));
  const auto parsed = ask_until_parsed<ParsedScores>(
      ctx, prompt, RequestTag{"judge_analysis", std::string(scope), position}, parse_scores);
  return AnalysisScore{position, parsed.accuracy, parsed.conciseness, ctx.judge_model_id};
}

std::vector<CeJudgment> load_ce_judgments(const std::filesystem::path& path) {
  std::vector<CeJudgment> out;
  const auto contents = read_jsonl(path);
  if (!contents.quarantined.empty()) {
    throw Error(ErrorKind::CorruptState,
                fmt::format("{} line {} is not valid JSON", path.string(),
                            contents.quarantined.front().line_number));
  }
  for (const auto& j : contents.records) out.push_back(j.get<CeJudgment>());
  return out;
}

std::vector<AnalysisJudgment> load_analysis_judgments(const std::filesystem::path& path) {
  std::vector<AnalysisJudgment> out;
  const auto contents = read_jsonl(path);
  if (!contents.quarantined.empty()) {
    throw Error(ErrorKind::CorruptState,
                fmt::format("{} line {} is not valid JSON", path.string(),
                            contents.quarantined.front().line_number));
  }
  for (const auto& j : contents.records) out.push_back(j.get<AnalysisJudgment>());
  return out;
}

namespace {

using JudgeKey = std::tuple<std::string, int, std::string, std::string>;

template <typename Fn>
void run_parallel(std::size_t count, int parallelism, Fn fn) {
  std::atomic<std::size_t> next{0};
  std::mutex m;
  std::exception_ptr first;
  auto worker = [&] {
    for (std::size_t k = next++; k < count; k = next++) {
      try {
        fn(k);
      } catch (...) {
        std::lock_guard lock(m);
        if (!first) first = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(parallelism, static_cast<int>(count)));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (first) std::rethrow_exception(first);
}

}  // namespace

JudgeRunSummary judge_run(const std::filesystem::path& run_dir, ProviderRegistry& providers,
                          const JudgeRunOptions& options) {
  const RunLayout layout{run_dir};
  const auto config = load_manifest_config(run_dir);
  const auto chains = load_chains(run_dir);
  const auto prompts = prompts_for(config);

  JudgeContext ctx{prompts,
                   providers,
                   options.judge_model_id.value_or(config.judge.model_id),
                   config.judge.parse_retries,
                   config.judge.temperature,
                   config.judge.max_tokens};
  if (ctx.judge_model_id.empty()) {
    throw Error(ErrorKind::ConfigError, "no judge model configured (use --judge-model)");
  }
  const auto ce_spec = options.ce_positions.value_or(config.judge.ce_positions);
  const auto an_spec = options.analysis_positions.value_or(config.judge.analysis_positions);
  const auto ce_template = prompts.get("judge_ce").id;
  const auto an_template = prompts.get("judge_analysis").id;

  const auto ce_path = layout.judgments_dir() / "ce.jsonl";
  const auto an_path = layout.judgments_dir() / "analysis.jsonl";
  std::map<JudgeKey, CeJudgment> ce_rows;
  std::map<JudgeKey, AnalysisJudgment> an_rows;
  for (auto& r : load_ce_judgments(ce_path)) {
    ce_rows[{r.chain_id, r.step_index, r.judge_model_id, r.template_id}] = r;
  }
  for (auto& r : load_analysis_judgments(an_path)) {
    an_rows[{r.chain_id, r.score.position, r.score.judge_model_id, r.template_id}] = r;
  }

  struct Task {
    const Chain* chain;
    int index;
    bool is_ce;
  };
  std::vector<Task> tasks;
  JudgeRunSummary summary;
  for (const auto& chain : chains) {
    if (chain.status != ChainStatus::complete) {
      spdlog::warn("skipping chain {} ({})", chain.chain_id, to_string(chain.status));
      continue;
    }
    const int n = static_cast<int>(chain.steps.size());
    for (int p : sample_positions(n, ce_spec)) {
      const JudgeKey key{chain.chain_id, p, ctx.judge_model_id, ce_template};
      if (!options.force && ce_rows.count(key)) ++summary.ce_reused;
      else tasks.push_back({&chain, p, true});
    }
    for (int p : sample_positions(n + 1, an_spec)) {
      const JudgeKey key{chain.chain_id, p, ctx.judge_model_id, an_template};
      if (!options.force && an_rows.count(key)) ++summary.analysis_reused;
      else tasks.push_back({&chain, p, false});
    }
  }

  std::mutex m;
  std::vector<json> failures;
  run_parallel(tasks.size(), options.parallelism, [&](std::size_t k) {
    const auto& t = tasks[k];
    const auto& chain = *t.chain;
    const auto& concept_ = config.concept_by_id(chain.concept_id);
    try {
      if (t.is_ce) {
        const auto& s = chain.steps[static_cast<std::size_t>(t.index)];
        auto verdict = judge_counterexample(concept_, chain.analyses[static_cast<std::size_t>(t.index)],
                                            s.ce_text, ctx, chain.chain_id, t.index);
        CeJudgment row{chain.chain_id, chain.concept_id, chain.condition, t.index,
                       std::move(verdict), ctx.judge_model_id, ce_template};
        std::lock_guard lock(m);
        ce_rows[{row.chain_id, row.step_index, row.judge_model_id, row.template_id}] = row;
        ++summary.ce_judged;
      } else {
        auto score = judge_analysis(concept_, chain.analyses[static_cast<std::size_t>(t.index)],
                                    t.index, ctx, chain.chain_id);
        AnalysisJudgment row{chain.chain_id, chain.concept_id, chain.condition, score,
                             an_template};
        std::lock_guard lock(m);
        an_rows[{row.chain_id, score.position, score.judge_model_id, row.template_id}] = row;
        ++summary.analysis_judged;
      }
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::PreconditionViolation || e.kind() == ErrorKind::UnknownModel ||
          e.kind() == ErrorKind::ConfigError) {
        throw;
      }
      std::lock_guard lock(m);
      ++summary.failures;
      failures.push_back(json{{"kind", t.is_ce ? "ce" : "analysis"},
                              {"chain_id", chain.chain_id},
                              {"index", t.index},
                              {"judge_model_id", ctx.judge_model_id},
                              {"error_kind", to_string(e.kind())},
                              {"error", e.what()},
                              {"raw", e.detail()}});
    }
  });

  std::string ce_text;
  for (const auto& [_, row] : ce_rows) ce_text += json(row).dump() + "\n";
  std::string an_text;
  for (const auto& [_, row] : an_rows) an_text += json(row).dump() + "\n";
  write_file_atomic(ce_path, ce_text);
  write_file_atomic(an_path, an_text);
  if (!failures.empty()) {
    std::sort(failures.begin(), failures.end(),
              [](const json& a, const json& b) { return a.dump() < b.dump(); });
    JsonlAppender log(layout.judgments_dir() / "failures.jsonl");
    for (const auto& f : failures) log.append(f);
  }
  return summary;
}

}  // namespace cxgame
