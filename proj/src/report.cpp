#include "cxgame/report.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cxgame/annotation.hpp"
#include "cxgame/engine.hpp"
#include "cxgame/io.hpp"
#include "cxgame/judge.hpp"
#include "cxgame/tagging.hpp"

namespace cxgame {

namespace fs = std::filesystem;

std::string validity_by_position_csv(const std::vector<CeJudgment>& judgments,
                                     const std::vector<int>& requested) {
  std::string out = csv_row({"group", "position", "valid", "total", "fraction"});
  for (auto grouping : {Grouping::pooled, Grouping::by_condition}) {
    for (const auto& p : validity_by_position(judgments, grouping, requested).points) {
      out += csv_row({p.group, std::to_string(p.position), std::to_string(p.valid),
                      std::to_string(p.total), format_number(p.fraction())});
    }
  }
  return out;
}

std::string validity_by_concept_csv(const std::vector<CeJudgment>& judgments) {
  std::string out =
      csv_row({"rank", "concept_id", "concept_mean", "chain_id", "valid", "total", "rate"});
  int rank = 0;
  for (const auto& c : validity_by_concept(judgments)) {
    ++rank;
    for (const auto& chain : c.chains) {
      out += csv_row({std::to_string(rank), c.concept_id, format_number(c.mean), chain.chain_id,
                      std::to_string(chain.valid), std::to_string(chain.total),
                      format_number(chain.rate())});
    }
  }
  return out;
}

std::string length_series_csv(const std::vector<Chain>& chains) {
  std::string out = csv_row({"group", "iteration", "n", "mean_words"});
  for (auto grouping : {Grouping::pooled, Grouping::by_condition}) {
    for (const auto& p : length_series(chains, grouping)) {
      out += csv_row(
          {p.group, std::to_string(p.position), std::to_string(p.n), format_number(p.mean)});
    }
  }
  return out;
}

std::string score_series_csv(const std::vector<AnalysisJudgment>& judgments) {
  std::string out = csv_row({"group", "position", "n", "accuracy", "conciseness"});
  for (auto grouping : {Grouping::pooled, Grouping::by_condition}) {
    for (const auto& p : score_series(judgments, grouping)) {
      out += csv_row({p.group, std::to_string(p.position), std::to_string(p.n),
                      format_number(p.accuracy), format_number(p.conciseness)});
    }
  }
  return out;
}

RatingTable collect_human_ratings(const fs::path& run_dir) {
  RatingTable merged;
  const auto root = run_dir / "annotation";
  if (!fs::exists(root)) return merged;
  std::vector<fs::path> sets;
  for (const auto& e : fs::directory_iterator(root)) {
    if (fs::exists(e.path() / "mapping.sealed.json")) sets.push_back(e.path());
  }
  std::sort(sets.begin(), sets.end());
  for (const auto& dir : sets) {
    const auto table = unblind(dir);
    for (const auto& row : table.rows()) merged.add(row);
  }
  return merged;
}

AgreementInputs merge_agreement_inputs(const RatingTable& ratings,
                                       const std::vector<CeJudgment>& judgments) {
  AgreementInputs out;
  std::set<std::string> models;
  for (const auto& j : judgments) models.insert(j.judge_model_id);
  for (const auto& r : ratings.raters()) {
    if (!models.contains(r)) out.humans.push_back(r);
  }
  for (const auto& row : ratings.rows()) {
    if (!models.contains(row.rater_id)) out.table.add(row);
  }
  add_judgments(out.table, judgments);
  out.models.assign(models.begin(), models.end());
  return out;
}

namespace {

json fraction_json(std::size_t valid, std::size_t total) {
  json j{{"valid", valid}, {"total", total}};
  j["fraction"] = total ? json(static_cast<double>(valid) / static_cast<double>(total))
                        : json(nullptr);
  return j;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

class Writer {
 public:
  explicit Writer(fs::path root) : root_(std::move(root)) {}

  void put(const fs::path& relative, std::string_view contents) {
    fs::create_directories((root_ / relative).parent_path());
    write_file_atomic(root_ / relative, contents);
    files_[relative.generic_string()] = sha256_hex(contents);
    written_.push_back(relative);
  }

  const std::vector<fs::path>& written() const { return written_; }
  const std::map<std::string, std::string>& files() const { return files_; }

 private:
  fs::path root_;
  std::vector<fs::path> written_;
  std::map<std::string, std::string> files_;
};

}  // namespace

ReportOutcome write_reports(const fs::path& run_dir, const ReportOptions& options) {
  const RunLayout layout{run_dir};
  const auto config = load_manifest_config(run_dir);
  const auto chains = load_chains(run_dir);
  Writer writer(layout.reports_dir());
  ReportOutcome outcome;
  json summary;
  json notes = json::array();

  summary["run_id"] = config.run_id;
  {
    std::size_t complete = 0, failed = 0, steps = 0;
    for (const auto& c : chains) {
      complete += c.status == ChainStatus::complete;
      failed += c.status == ChainStatus::failed;
      steps += c.steps.size();
    }
    summary["chains"] = {{"total", chains.size()},
                         {"complete", complete},
                         {"failed", failed},
                         {"running", chains.size() - complete - failed},
                         {"cycles", steps}};
  }

  writer.put("length_series.csv", length_series_csv(chains));
  {
    json length = json::object();
    for (auto grouping : {Grouping::pooled, Grouping::by_condition}) {
      const auto series = length_series(chains, grouping);
      std::map<std::string, std::vector<SeriesPoint>> by_group;
      for (const auto& p : series) by_group[p.group].push_back(p);
      for (const auto& [group, points] : by_group) {
        const double first = points.front().mean;
        const double last = points.back().mean;
        length[group] = {{"initial_mean_words", first},
                         {"final_mean_words", last},
                         {"final_iteration", points.back().position},
                         {"growth", first > 0 ? json(last / first) : json(nullptr)}};
      }
    }
    summary["length"] = length;
  }

  const auto ce_path = layout.judgments_dir() / "ce.jsonl";
  const auto an_path = layout.judgments_dir() / "analysis.jsonl";
  std::vector<CeJudgment> ce_judgments;
  if (fs::exists(ce_path)) {
    ce_judgments = load_ce_judgments(ce_path);
    writer.put("validity_by_position.csv", validity_by_position_csv(ce_judgments));
    writer.put("validity_by_concept.csv", validity_by_concept_csv(ce_judgments));
    json validity = json::object();
    std::map<std::string, std::pair<std::size_t, std::size_t>> counts;
    for (const auto& j : ce_judgments) {
      for (const auto& g : {std::string("all"), std::string(to_string(j.condition))}) {
        counts[g].first += j.verdict.coarse_valid;
        ++counts[g].second;
      }
    }
    for (const auto& [g, c] : counts) validity[g] = fraction_json(c.first, c.second);
    summary["validity"] = validity;
    json curves = json::object();
    for (const auto& p : validity_by_position(ce_judgments, Grouping::by_condition).points) {
      auto& entry = curves[p.group];
      if (!entry.contains("first")) {
        entry["first"] = {{"position", p.position}, {"fraction", p.fraction()}, {"n", p.total}};
      }
      entry["last"] = {{"position", p.position}, {"fraction", p.fraction()}, {"n", p.total}};
    }
    summary["validity_curve_endpoints"] = curves;
  }
  if (fs::exists(an_path)) {
    writer.put("score_series.csv", score_series_csv(load_analysis_judgments(an_path)));
  }
  if (!fs::exists(ce_path) || !fs::exists(an_path)) outcome.missing_stages.push_back("judgments");

  std::vector<fs::path> tag_files;
  if (fs::exists(layout.tags_dir())) {
    for (const auto& e : fs::directory_iterator(layout.tags_dir())) {
      if (e.path().extension() == ".json") tag_files.push_back(e.path());
    }
  }
  std::sort(tag_files.begin(), tag_files.end());
  if (tag_files.empty()) {
    outcome.missing_stages.push_back("tags");
  } else {
    std::string oscillations = csv_row({"concept_id", "chain_id", "tag", "oscillations"});
    json tags_summary = json::object();
    for (const auto& f : tag_files) {
      const auto doc = concept_tags_from_json(read_json_file(f));
      writer.put(fs::path("subconcepts") / (f.stem().string() + ".csv"),
                 aggregate_csv(doc.aggregate));
      std::size_t transitions = 0, rows = 0;
      for (const auto& m : doc.matrices) {
        for (std::size_t r = 0; r < m.rows.size(); ++r) {
          const auto n = oscillation_count(m.rows[r]);
          transitions += n;
          ++rows;
          oscillations += csv_row({doc.concept_id, m.chain_id, m.tags[r], std::to_string(n)});
        }
      }
      tags_summary[f.stem().string()] = {
          {"subconcepts", doc.subconcepts.size()},
          {"chains", doc.matrices.size()},
          {"mean_oscillations",
           rows ? json(static_cast<double>(transitions) / static_cast<double>(rows))
                : json(nullptr)}};
    }
    writer.put("oscillations.csv", oscillations);
    summary["subconcepts"] = tags_summary;
  }

  const auto ratings = collect_human_ratings(run_dir);
  if (ratings.empty() || ce_judgments.empty()) {
    summary["agreement"] = nullptr;
    if (!ratings.empty()) notes.push_back("human ratings present but no judge verdicts");
  } else {
    const auto inputs = merge_agreement_inputs(ratings, ce_judgments);
    AgreementOptions ao{options.resamples, options.level, options.stats_seed, true};
    const auto rows = agreement_table(inputs.table, inputs.humans, inputs.models, ao);
    writer.put("agreement.csv", agreement_csv(rows));
    json agreement;
    agreement["human_validity_rater_mean"] =
        optional_json(rater_mean_validity(inputs.table, inputs.humans));
    json per_model = json::object();
    for (const auto& m : inputs.models) {
      std::size_t valid = 0, total = 0;
      std::set<std::string> human_items;
      for (const auto& h : inputs.humans) {
        for (auto& item : inputs.table.items_rated_by(h)) human_items.insert(std::move(item));
      }
      for (const auto& item : human_items) {
        if (const auto* r = inputs.table.find(item, m)) {
          ++total;
          valid += r->coarse_valid;
        }
      }
      json entry{{"validity_on_human_items", fraction_json(valid, total)}};
      try {
        const auto pooled = pooled_agreement(inputs.table, inputs.humans, m);
        entry["pooled_agreement"] = {{"matches", pooled.matches},
                                     {"pairs", pooled.pairs},
                                     {"agreement", pooled.agreement()}};
        const auto d = disagreement_direction(inputs.table, inputs.humans, m);
        entry["disagreement"] = {{"human_reject_model_accept", d.human_reject_model_accept},
                                 {"human_accept_model_reject", d.human_accept_model_reject}};
      } catch (const Error& e) {
        notes.push_back(fmt::format("{}: {}", m, e.what()));
      }
      per_model[m] = entry;
    }
    agreement["models"] = per_model;
    agreement["rows"] = rows.size();
    summary["agreement"] = agreement;
  }

  summary["missing_stages"] = outcome.missing_stages;
  summary["notes"] = notes;
  writer.put("summary.json", summary.dump(2) + "\n");

  json manifest{{"run_id", config.run_id}, {"files", json::array()}};
  for (const auto& [path, digest] : writer.files()) {
    manifest["files"].push_back({{"path", path}, {"sha256", digest}});
  }
  manifest["missing_stages"] = outcome.missing_stages;
  writer.put("manifest.json", manifest.dump(2) + "\n");
  outcome.written = writer.written();
  return outcome;
}

}  // namespace cxgame
