#include "cxgame/cli.hpp"

#include <algorithm>
#include <atomic>
#include <csignal>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cxgame/annotation.hpp"
#include "cxgame/config.hpp"
#include "cxgame/engine.hpp"
#include "cxgame/judge.hpp"
#include "cxgame/report.hpp"
#include "cxgame/stats.hpp"
#include "cxgame/tagging.hpp"

namespace cxgame {

namespace fs = std::filesystem;

namespace {

std::atomic<AnnotationServer*> g_serving{nullptr};

extern "C" void stop_serving(int) {
  if (auto* s = g_serving.load()) s->stop();
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    const auto item = text.substr(pos, comma - pos);
    if (!item.empty()) {
      try {
        std::size_t used = 0;
        out.push_back(std::stoi(item, &used));
        if (used != item.size()) throw std::invalid_argument(item);
      } catch (const std::exception&) {
        throw Error(ErrorKind::ConfigError, "not an integer list: " + text);
      }
    }
    pos = comma + 1;
  }
  if (out.empty()) throw Error(ErrorKind::ConfigError, "empty integer list");
  return out;
}

std::vector<std::string> parse_name_list(const std::string& text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    auto item = text.substr(pos, comma - pos);
    if (!item.empty()) out.push_back(std::move(item));
    pos = comma + 1;
  }
  return out;
}

struct Common {
  std::string config;
  std::string run_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> parallelism;
  bool dry_run = false;
  std::string log_level = "info";
};

fs::path require_run_dir(const Common& c) {
  if (c.run_dir.empty()) throw Error(ErrorKind::ConfigError, "--run-dir is required");
  return c.run_dir;
}

void print_summary(std::ostream& out, const RunSummary& s) {
  fmt::print(out, "chains: {} total, {} complete, {} failed, {} already complete\n",
             s.chains_total, s.chains_completed, s.chains_failed, s.chains_skipped);
  fmt::print(out, "steps executed: {}\n", s.steps_executed);
  for (const auto& f : s.failures) fmt::print(out, "failed: {}\n", f);
}

int cmd_run(const Common& c, std::ostream& out) {
  if (c.config.empty()) throw Error(ErrorKind::ConfigError, "--config is required");
  auto config = load_run_config(c.config);
  if (c.seed) {
    config.rng_seed = *c.seed;
    config.mock.script.seed = *c.seed;
  }
  if (auto v = config.violations(); !v.empty()) throw Error(ErrorKind::ConfigError, v.front());
  const fs::path run_dir = c.run_dir.empty() ? fs::path("runs") / config.run_id : fs::path(c.run_dir);
  const auto plan = plan_run(config);
  if (c.dry_run) {
    fmt::print(out, "run {} -> {}\n", config.run_id, run_dir.string());
    fmt::print(out, "{} chains, {} iterations each, {} cycles\n", plan.size(), config.iterations,
               plan.size() * static_cast<std::size_t>(config.iterations));
    fmt::print(out, "schedule: {} [{}]\n", to_string(config.schedule.mode),
               fmt::join(config.schedule.model_ids, ", "));
    for (const auto& p : plan) {
      fmt::print(out, "  {} {} {} replicate {}\n", p.chain_id, p.concept_id,
                 to_string(p.condition), p.replicate);
    }
    return 0;
  }
  auto registry = build_registry(config);
  RunOptions options;
  options.parallelism = c.parallelism.value_or(config.parallelism);
  const auto summary = execute_run(config, *registry, run_dir, options);
  fmt::print(out, "run dir: {}\n", run_dir.string());
  print_summary(out, summary);
  return summary.chains_failed ? 1 : 0;
}

int cmd_resume(const Common& c, std::ostream& out) {
  const auto run_dir = require_run_dir(c);
  const auto config = load_manifest_config(run_dir);
  if (c.dry_run) {
    const auto chains = load_chains(run_dir);
    std::map<std::string, const Chain*> by_id;
    for (const auto& ch : chains) by_id[ch.chain_id] = &ch;
    std::size_t pending = 0;
    for (const auto& p : load_manifest_chains(run_dir)) {
      const auto it = by_id.find(p.chain_id);
      const std::size_t done = it == by_id.end() ? 0 : it->second->steps.size();
      if (it != by_id.end() && it->second->status == ChainStatus::complete) continue;
      ++pending;
      fmt::print(out, "  {} {} steps done, {} to go\n", p.chain_id, done,
                 static_cast<std::size_t>(config.iterations) - done);
    }
    fmt::print(out, "{} chains to resume\n", pending);
    return 0;
  }
  auto registry = build_registry(config);
  RunOptions options;
  options.parallelism = c.parallelism.value_or(config.parallelism);
  const auto summary = resume_run(run_dir, *registry, options);
  print_summary(out, summary);
  return summary.chains_failed ? 1 : 0;
}

int cmd_judge(const Common& c, const std::string& judge_model, const std::string& positions,
              const std::string& analysis_positions, bool force, std::ostream& out) {
  const auto run_dir = require_run_dir(c);
  auto config = load_manifest_config(run_dir);
  JudgeRunOptions options;
  options.force = force;
  options.parallelism = c.parallelism.value_or(config.parallelism);
  if (!judge_model.empty()) {
    options.judge_model_id = judge_model;
    config.judge.model_id = judge_model;
  }
  if (!positions.empty()) {
    options.ce_positions = PositionSpec::parse(positions);
    config.judge.ce_positions = *options.ce_positions;
  }
  if (!analysis_positions.empty()) {
    options.analysis_positions = PositionSpec::parse(analysis_positions);
    config.judge.analysis_positions = *options.analysis_positions;
  }
  if (config.judge.model_id.empty()) {
    throw Error(ErrorKind::ConfigError, "no judge model: set [judge] model or --judge-model");
  }
  if (c.dry_run) {
    std::size_t ce = 0, analyses = 0, chains = 0;
    for (const auto& ch : load_chains(run_dir)) {
      if (ch.status != ChainStatus::complete) continue;
      ++chains;
      const int steps = static_cast<int>(ch.steps.size());
      ce += sample_positions(steps, config.judge.ce_positions).size();
      analyses += sample_positions(steps + 1, config.judge.analysis_positions).size();
    }
    fmt::print(out, "judge {} over {} complete chains: {} counterexamples, {} analyses\n",
               config.judge.model_id, chains, ce, analyses);
    fmt::print(out, "ce positions: {}; analysis positions: {}\n", config.judge.ce_positions.str(),
               config.judge.analysis_positions.str());
    return 0;
  }
  auto registry = build_registry(config);
  const auto s = judge_run(run_dir, *registry, options);
  fmt::print(out, "counterexamples: {} judged, {} reused\n", s.ce_judged, s.ce_reused);
  fmt::print(out, "analyses: {} judged, {} reused\n", s.analysis_judged, s.analysis_reused);
  if (s.failures) {
    fmt::print(out, "{} judgments failed; see judgments/failures.jsonl\n", s.failures);
    return 1;
  }
  return 0;
}

int cmd_tag(const Common& c, bool force, std::ostream& out) {
  const auto run_dir = require_run_dir(c);
  const auto config = load_manifest_config(run_dir);
  if (config.tagging.model_id.empty()) {
    throw Error(ErrorKind::ConfigError, "no tagging model: set [tagging] model");
  }
  if (c.dry_run) {
    std::set<std::string> concepts;
    std::size_t definitions = 0;
    for (const auto& ch : load_chains(run_dir)) {
      if (ch.status != ChainStatus::complete) continue;
      concepts.insert(ch.concept_id);
      definitions += ch.analyses.size();
    }
    fmt::print(out, "tag with {}: {} concepts, {} definitions\n", config.tagging.model_id,
               concepts.size(), definitions);
    return 0;
  }
  auto registry = build_registry(config);
  TagRunOptions options{force, c.parallelism.value_or(config.parallelism)};
  const auto s = tag_run(run_dir, *registry, options);
  fmt::print(out, "concepts tagged: {}, reused: {}, definitions tagged: {}\n", s.concepts_tagged,
             s.concepts_reused, s.definitions_tagged);
  return 0;
}

struct ExportArgs {
  std::string set_id = "human_eval";
  std::string iterations = "1,3,5";
  int per_iteration = 20;
  std::string condition;
  std::string concept_id;
  std::string raters = "H1,H2,H3,H4,H5";
};

fs::path set_dir(const fs::path& run_dir, const std::string& set_id) {
  if (!is_safe_token(set_id)) {
    throw Error(ErrorKind::ConfigError, "set id must match [A-Za-z0-9_-]+: " + set_id);
  }
  return run_dir / "annotation" / set_id;
}

int cmd_export(const Common& c, const ExportArgs& a, std::ostream& out) {
  const auto run_dir = require_run_dir(c);
  const auto config = load_manifest_config(run_dir);
  ExportRequest request;
  request.set_id = a.set_id;
  request.step_indices = parse_int_list(a.iterations);
  request.per_stratum = a.per_iteration;
  request.seed = c.seed.value_or(derive_seed(config.rng_seed, "annotation:" + a.set_id));
  if (!a.condition.empty()) {
    request.condition = parse_condition(a.condition);
    if (!request.condition) throw Error(ErrorKind::ConfigError, "unknown condition " + a.condition);
  }
  if (!a.concept_id.empty()) request.concept_id = a.concept_id;
  request.raters = parse_name_list(a.raters);
  for (const auto& r : request.raters) {
    if (!is_safe_token(r)) throw Error(ErrorKind::ConfigError, "bad rater id: " + r);
  }
  const auto set = build_annotation_set(load_chains(run_dir), config.concepts, request);
  const auto dir = set_dir(run_dir, a.set_id);
  if (c.dry_run) {
    fmt::print(out, "would export {} items to {}\n", set.items.size(), dir.string());
    return 0;
  }
  if (fs::exists(dir / "items.json")) {
    throw Error(ErrorKind::ConfigError, dir.string() + " already holds an exported set");
  }
  write_annotation_set(dir, set);
  fmt::print(out, "exported {} items to {}\n", set.items.size(), dir.string());
  return 0;
}

int cmd_serve(const Common& c, const std::string& root, const std::string& host, int port,
              std::ostream& out) {
  const fs::path annotation_root =
      root.empty() ? require_run_dir(c) / "annotation" : fs::path(root);
  if (c.dry_run) {
    fmt::print(out, "would serve {} on {}:{}\n", annotation_root.string(), host, port);
    return 0;
  }
  AnnotationServer server(annotation_root);
  const int bound = server.bind(host, port);
  fmt::print(out, "serving {} on http://{}:{}/api/sets/\n", annotation_root.string(), host, bound);
  out.flush();
  g_serving = &server;
  std::signal(SIGINT, stop_serving);
  std::signal(SIGTERM, stop_serving);
  server.listen();
  g_serving = nullptr;
  return 0;
}

int cmd_ingest(const Common& c, const std::string& set_id, const std::string& csv,
               std::ostream& out, std::ostream& err) {
  const auto dir = set_dir(require_run_dir(c), set_id);
  if (csv.empty()) throw Error(ErrorKind::ConfigError, "--csv is required");
  if (c.dry_run) {
    const auto rows = parse_csv(read_text_file(csv));
    fmt::print(out, "would ingest up to {} rows from {} into {}\n",
               rows.empty() ? 0 : rows.size() - 1, csv, dir.string());
    return 0;
  }
  const auto result = ingest_csv(dir, csv);
  fmt::print(out, "accepted {} responses\n", result.accepted);
  for (const auto& r : result.rejected) {
    fmt::print(err, "{}:{}: {}\n", csv, r.line_number, r.reason);
  }
  return result.rejected.empty() ? 0 : 1;
}

int cmd_unblind(const Common& c, const std::string& set_id, const std::string& out_path,
                std::ostream& out) {
  const auto dir = set_dir(require_run_dir(c), set_id);
  const auto table = unblind(dir);
  const fs::path target = out_path.empty() ? dir / "ratings.jsonl" : fs::path(out_path);
  if (c.dry_run) {
    fmt::print(out, "would write {} rating rows to {}\n", table.rows().size(), target.string());
    return 0;
  }
  write_file_atomic(target, rating_table_jsonl(table));
  fmt::print(out, "wrote {} rating rows to {}\n", table.rows().size(), target.string());
  return 0;
}

int cmd_agreement(const Common& c, const std::string& ratings, const std::string& judge,
                  const std::string& out_path, std::ostream& out) {
  if (ratings.empty() || judge.empty()) {
    throw Error(ErrorKind::ConfigError, "--ratings and --judge are required");
  }
  const auto inputs = merge_agreement_inputs(load_rating_table(ratings), load_ce_judgments(judge));
  fs::path target = out_path;
  if (target.empty()) {
    target = (c.run_dir.empty() ? fs::path("reports") : fs::path(c.run_dir) / "reports") /
             "agreement.csv";
  }
  const AgreementOptions options{2000, 0.95, c.seed.value_or(0), true};
  const auto rows = agreement_table(inputs.table, inputs.humans, inputs.models, options);
  if (rows.empty()) throw Error(ErrorKind::EmptyInput, "no overlapping items to compare");
  if (c.dry_run) {
    fmt::print(out, "would write {} agreement rows to {}\n", rows.size(), target.string());
    return 0;
  }
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  write_file_atomic(target, agreement_csv(rows));
  fmt::print(out, "wrote {} rows to {}\n", rows.size(), target.string());
  return 0;
}

int cmd_report(const Common& c, std::ostream& out, std::ostream& err) {
  const auto run_dir = require_run_dir(c);
  const auto config = load_manifest_config(run_dir);
  if (c.dry_run) {
    fmt::print(out, "would write reports to {}\n", RunLayout{run_dir}.reports_dir().string());
    return 0;
  }
  ReportOptions options;
  options.stats_seed = c.seed.value_or(config.stats_seed);
  const auto outcome = write_reports(run_dir, options);
  for (const auto& p : outcome.written) fmt::print(out, "wrote reports/{}\n", p.generic_string());
  if (!outcome.missing_stages.empty()) {
    for (const auto& s : outcome.missing_stages) {
      const Error e(ErrorKind::MissingInputs, "stage has not run: " + s, s);
      fmt::print(err, "{}\n", e.what());
    }
    return 1;
  }
  return 0;
}

void configure_logging(const std::string& level) {
  auto logger = spdlog::get("cxgame");
  if (!logger) logger = spdlog::stderr_color_mt("cxgame");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(level));
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Counterexample-repair chains, judging, tagging and agreement statistics",
               "cxgame"};
  app.require_subcommand(1);
  Common c;
  std::uint64_t seed = 0;
  int parallelism = 0;

  auto add_common = [&](CLI::App* sub, bool with_config) {
    if (with_config) sub->add_option("--config", c.config, "Run config (.toml or .json)");
    sub->add_option("--run-dir", c.run_dir, "Run directory");
    sub->add_option("--seed", seed, "Seed override");
    sub->add_option("--parallelism", parallelism, "Concurrent chains or calls")
        ->check(CLI::Range(1, 1024));
    sub->add_flag("--dry-run", c.dry_run, "Print the plan and touch nothing");
    sub->add_option("--log-level", c.log_level)
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
  };

  auto* run = app.add_subcommand("run", "Start a run from a config");
  add_common(run, true);
  auto* resume = app.add_subcommand("resume", "Continue unfinished chains of a run");
  add_common(resume, false);

  std::string judge_model, positions, analysis_positions;
  bool force = false;
  auto* judge = app.add_subcommand("judge", "Judge counterexamples and analyses of a run");
  add_common(judge, false);
  judge->add_option("--judge-model", judge_model, "Judge model id");
  judge->add_option("--positions", positions, "CE positions: all, a scheme or 0,1,2");
  judge->add_option("--analysis-positions", analysis_positions, "Analysis positions");
  judge->add_flag("--force", force, "Re-judge items already on disk");

  auto* tag = app.add_subcommand("tag", "Extract and tag sub-concepts");
  add_common(tag, false);
  tag->add_flag("--force", force, "Re-tag concepts already on disk");

  auto* annotate = app.add_subcommand("annotate", "Blinded human annotation");
  annotate->require_subcommand(1);
  ExportArgs ex;
  auto* exp = annotate->add_subcommand("export", "Export a blinded item set");
  add_common(exp, false);
  exp->add_option("--set-id", ex.set_id);
  exp->add_option("--iterations", ex.iterations, "Step indices to sample, e.g. 1,3,5");
  exp->add_option("--per-iteration", ex.per_iteration)->check(CLI::PositiveNumber);
  exp->add_option("--condition", ex.condition);
  exp->add_option("--concept", ex.concept_id);
  exp->add_option("--raters", ex.raters, "Comma-separated rater tokens");

  std::string root, host = "127.0.0.1";
  int port = 8080;
  auto* serve = annotate->add_subcommand("serve", "Serve annotation sets over HTTP");
  add_common(serve, false);
  serve->add_option("--annotation-dir", root, "Directory holding <set_id>/ folders");
  serve->add_option("--host", host);
  serve->add_option("--port", port)->check(CLI::Range(0, 65535));

  std::string set_id = "human_eval", csv, out_path;
  auto* ingest = annotate->add_subcommand("ingest", "Ingest spreadsheet responses");
  add_common(ingest, false);
  ingest->add_option("--set-id", set_id);
  ingest->add_option("--csv", csv);

  auto* unblind_cmd = annotate->add_subcommand("unblind", "Join responses with the sealed mapping");
  add_common(unblind_cmd, false);
  unblind_cmd->add_option("--set-id", set_id);
  unblind_cmd->add_option("--out", out_path);

  auto* stats = app.add_subcommand("stats", "Agreement statistics");
  stats->require_subcommand(1);
  std::string ratings, judgments;
  auto* agreement = stats->add_subcommand("agreement", "Human and judge agreement table");
  add_common(agreement, false);
  agreement->add_option("--ratings", ratings, "Unblinded ratings JSONL");
  agreement->add_option("--judge", judgments, "Judge verdicts JSONL");
  agreement->add_option("--out", out_path);

  auto* report = app.add_subcommand("report", "Write figure data for a run");
  add_common(report, false);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    fmt::print(err, "{}\n", e.what());
    CLI::App* failing = &app;
    for (auto* sub : app.get_subcommands()) {
      failing = sub;
      for (auto* inner : sub->get_subcommands()) failing = inner;
    }
    err << failing->help();
    return 1;
  }

  auto was_set = [](CLI::App* sub, const char* name) { return sub->count(name) > 0; };
  try {
    for (auto* sub : {run, resume, judge, tag, exp, serve, ingest, unblind_cmd, agreement, report}) {
      if (!sub->parsed()) continue;
      if (was_set(sub, "--seed")) c.seed = seed;
      if (was_set(sub, "--parallelism")) c.parallelism = parallelism;
    }
    configure_logging(c.log_level);

    if (run->parsed()) return cmd_run(c, out);
    if (resume->parsed()) return cmd_resume(c, out);
    if (judge->parsed()) return cmd_judge(c, judge_model, positions, analysis_positions, force, out);
    if (tag->parsed()) return cmd_tag(c, force, out);
    if (exp->parsed()) return cmd_export(c, ex, out);
    if (serve->parsed()) return cmd_serve(c, root, host, port, out);
    if (ingest->parsed()) return cmd_ingest(c, set_id, csv, out, err);
    if (unblind_cmd->parsed()) return cmd_unblind(c, set_id, out_path, out);
    if (agreement->parsed()) return cmd_agreement(c, ratings, judgments, out_path, out);
    if (report->parsed()) return cmd_report(c, out, err);
    err << app.help();
    return 1;
  } catch (const Error& e) {
    fmt::print(err, "error: {}\n", e.what());
    return is_user_error(e.kind()) ? 1 : 2;
  } catch (const json::exception& e) {
    fmt::print(err, "error: malformed JSON input: {}\n", e.what());
    return 1;
  } catch (const fs::filesystem_error& e) {
    fmt::print(err, "error: {}\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    fmt::print(err, "internal error: {}\n", e.what());
    return 2;
  }
}

}  // namespace cxgame
