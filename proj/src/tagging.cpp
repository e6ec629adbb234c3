#include "cxgame/tagging.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cxgame/engine.hpp"
#include "cxgame/io.hpp"

namespace cxgame {

double AggregateMatrix::fraction(std::size_t row, std::size_t column) const {
  if (chain_count == 0) return 0.0;
  return static_cast<double>(present.at(row).at(column)) / static_cast<double>(chain_count);
}

bool is_snake_case(std::string_view tag) {
  if (tag.empty() || tag.front() < 'a' || tag.front() > 'z' || tag.back() == '_') return false;
  return std::all_of(tag.begin(), tag.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
  });
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string_view fenced_body(std::string_view raw, std::string_view name, ErrorKind kind) {
  const std::string open = "```" + std::string(name);
  auto start = raw.find(open);
  if (start == std::string_view::npos) {
    throw Error(kind, fmt::format("no ```{} block", name), std::string(raw));
  }
  start = raw.find('\n', start);
  const auto end = start == std::string_view::npos ? start : raw.find("```", start);
  if (end == std::string_view::npos) {
    throw Error(kind, "unterminated block", std::string(raw));
  }
  return raw.substr(start + 1, end - start - 1);
}

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

PromptVars concept_vars(const Concept& c) {
  return PromptVars{{"concept", c.surface_form},
                    {"part_of_speech", std::string(to_string(c.part_of_speech))}};
}

}  // namespace

std::vector<SubConcept> parse_subconcepts(std::string_view concept_id, std::string_view raw) {
  const auto body = fenced_body(raw, "subconcepts", ErrorKind::ExtractionDegenerate);
  std::vector<SubConcept> out;
  std::set<std::string> seen;
  std::size_t pos = 0;
  while (pos < body.size()) {
    auto eol = body.find('\n', pos);
    if (eol == std::string_view::npos) eol = body.size();
    auto line = trim(body.substr(pos, eol - pos));
    pos = eol + 1;
    if (line.empty()) continue;
    if (line.front() == '-' || line.front() == '*') line = trim(std::string_view(line).substr(1));
    const auto colon = line.find(':');
    if (colon == std::string::npos) {
      spdlog::warn("sub-concept line without description ignored: '{}'", line);
      continue;
    }
    const auto tag = trim(std::string_view(line).substr(0, colon));
    const auto description = trim(std::string_view(line).substr(colon + 1));
    if (!is_snake_case(tag)) {
      spdlog::warn("sub-concept tag '{}' is not snake_case; ignored", tag);
      continue;
    }
    if (!seen.insert(tag).second) {
      spdlog::warn("duplicate sub-concept tag '{}' for {} dropped", tag, concept_id);
      continue;
    }
    out.push_back(SubConcept{std::string(concept_id), tag, description});
  }
  if (out.size() < kSubconceptFloor || out.size() > kSubconceptCeiling) {
    throw Error(ErrorKind::ExtractionDegenerate,
                fmt::format("{} unique sub-concepts for {} (allowed {}-{})", out.size(), concept_id,
                            kSubconceptFloor, kSubconceptCeiling),
                std::string(raw));
  }
  if (out.size() < kSubconceptBandLow || out.size() > kSubconceptBandHigh) {
    spdlog::warn("{} sub-concepts for {} is outside the {}-{} target band", out.size(), concept_id,
                 kSubconceptBandLow, kSubconceptBandHigh);
  }
  return out;
}

std::vector<bool> parse_presence(std::string_view raw, std::size_t expected) {
  const auto body = fenced_body(raw, "presence", ErrorKind::UnparsableVerdict);
  const auto key = body.find("presence:");
  if (key == std::string_view::npos) {
    throw Error(ErrorKind::UnparsableVerdict, "missing 'presence:' line", std::string(raw));
  }
  auto eol = body.find('\n', key);
  const auto values = body.substr(key + 9, (eol == std::string_view::npos ? body.size() : eol) -
                                               key - 9);
  std::vector<bool> out;
  for (char c : values) {
    if (c == '1') out.push_back(true);
    else if (c == '0') out.push_back(false);
    else if (c != ',' && c != ' ' && c != '\t' && c != '\r') {
      throw Error(ErrorKind::UnparsableVerdict, fmt::format("unexpected character '{}'", c),
                  std::string(raw));
    }
  }
  if (out.size() != expected) {
    throw Error(ErrorKind::UnparsableVerdict,
                fmt::format("presence vector has {} entries, expected {}", out.size(), expected),
                std::string(raw));
  }
  return out;
}

std::vector<SubConcept> extract_subconcepts(const Concept& concept_,
                                            const std::vector<std::string>& definitions,
                                            TaggingContext& ctx) {
  if (definitions.empty()) {
    throw Error(ErrorKind::PreconditionViolation, "no definitions to extract sub-concepts from");
  }
  std::string listing;
  for (std::size_t i = 0; i < definitions.size(); ++i) {
    listing += fmt::format("{}{}. {}", i ? "\n" : "", i + 1, definitions[i]);
  }
  auto vars = concept_vars(concept_);
  vars["definitions"] = listing;
  const auto prompt = ctx.prompts.render("extract_subconcepts", vars);
  auto result = ctx.providers.complete(CompletionRequest{
      ctx.model_id, prompt.system, prompt.user, ctx.max_tokens, ctx.temperature,
      RequestTag{"extract", concept_.id, 0}.str(), prompt.template_id});
  return parse_subconcepts(concept_.id, result.text);
}

std::vector<bool> tag_definition(const Concept& concept_, std::string_view definition,
                                 const std::vector<SubConcept>& subconcepts, TaggingContext& ctx,
                                 std::string_view scope, int index) {
  if (subconcepts.empty()) {
    throw Error(ErrorKind::PreconditionViolation, "tag list is empty");
  }
  std::string listing;
  for (std::size_t i = 0; i < subconcepts.size(); ++i) {
    listing += fmt::format("{}{}. {}: {}", i ? "\n" : "", i + 1, subconcepts[i].tag,
                           subconcepts[i].description);
  }
  auto vars = concept_vars(concept_);
  vars["definition"] = std::string(definition);
  vars["subconcepts"] = listing;
  const auto prompt = ctx.prompts.render("tag_definition", vars);
  const auto& reminder = ctx.prompts.get("format_reminder");
  std::optional<Error> last;
  for (int attempt = 0; attempt <= ctx.parse_retries; ++attempt) {
    std::string user = prompt.user;
    if (attempt > 0) user += "\n\n" + reminder.user;
    auto result = ctx.providers.complete(CompletionRequest{
        ctx.model_id, prompt.system, user, ctx.max_tokens, ctx.temperature,
        RequestTag{"tag", std::string(scope), index}.str(), prompt.template_id});
    try {
      return parse_presence(result.text, subconcepts.size());
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::UnparsableVerdict) throw;
      last = e;
    }
  }
  throw *last;
}

std::size_t oscillation_count(const std::vector<bool>& row) {
  std::size_t n = 0;
  for (std::size_t i = 1; i < row.size(); ++i) n += row[i] != row[i - 1];
  return n;
}

AggregateMatrix aggregate_presence(std::string_view concept_id,
                                   const std::vector<PresenceMatrix>& matrices) {
  AggregateMatrix out;
  out.concept_id = std::string(concept_id);
  if (matrices.empty()) return out;
  const auto& first = matrices.front();
  out.tags = first.tags;
  out.chain_count = matrices.size();
  const auto cols = first.columns();
  out.present.assign(first.tags.size(), std::vector<int>(cols, 0));
  for (const auto& m : matrices) {
    if (m.tags != first.tags) {
      throw Error(ErrorKind::ShapeMismatch,
                  fmt::format("chain {} uses a different tag list", m.chain_id));
    }
    if (m.rows.size() != m.tags.size()) {
      throw Error(ErrorKind::ShapeMismatch, fmt::format("chain {} has {} rows for {} tags",
                                                        m.chain_id, m.rows.size(), m.tags.size()));
    }
    for (std::size_t r = 0; r < m.rows.size(); ++r) {
      if (m.rows[r].size() != cols) {
        throw Error(ErrorKind::ShapeMismatch,
                    fmt::format("chain {} has {} columns, expected {}", m.chain_id,
                                m.rows[r].size(), cols));
      }
      for (std::size_t c = 0; c < cols; ++c) out.present[r][c] += m.rows[r][c] ? 1 : 0;
    }
  }
  return out;
}

json to_json_document(const ConceptTags& tags) {
  json subs = json::array();
  for (const auto& s : tags.subconcepts) {
    subs.push_back({{"tag", s.tag}, {"description", s.description}});
  }
  json matrices = json::object();
  for (const auto& m : tags.matrices) matrices[m.chain_id] = m.rows;
  json aggregate = json::array();
  for (std::size_t r = 0; r < tags.aggregate.present.size(); ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < tags.aggregate.columns(); ++c) {
      row.push_back(tags.aggregate.fraction(r, c));
    }
    aggregate.push_back(std::move(row));
  }
  return json{{"concept_id", tags.concept_id},
              {"subconcepts", subs},
              {"matrices", matrices},
              {"aggregate", aggregate},
              {"aggregate_counts", tags.aggregate.present},
              {"chain_count", tags.aggregate.chain_count}};
}

ConceptTags concept_tags_from_json(const json& j) {
  ConceptTags out;
  out.concept_id = j.at("concept_id").get<std::string>();
  std::vector<std::string> tag_names;
  for (const auto& s : j.at("subconcepts")) {
    out.subconcepts.push_back(
        {out.concept_id, s.at("tag").get<std::string>(), s.value("description", "")});
    tag_names.push_back(out.subconcepts.back().tag);
  }
  for (const auto& [chain_id, rows] : j.at("matrices").items()) {
    out.matrices.push_back(
        PresenceMatrix{chain_id, tag_names, rows.get<std::vector<std::vector<bool>>>()});
  }
  out.aggregate = aggregate_presence(out.concept_id, out.matrices);
  if (out.matrices.empty()) out.aggregate.tags = tag_names;
  return out;
}

std::string aggregate_csv(const AggregateMatrix& aggregate) {
  std::vector<std::string> header{"tag"};
  for (std::size_t c = 0; c < aggregate.columns(); ++c) header.push_back(std::to_string(c));
  std::string out = csv_row(header);
  for (std::size_t r = 0; r < aggregate.tags.size(); ++r) {
    std::vector<std::string> row{aggregate.tags[r]};
    for (std::size_t c = 0; c < aggregate.columns(); ++c) {
      row.push_back(format_number(aggregate.fraction(r, c)));
    }
    out += csv_row(row);
  }
  return out;
}

namespace {

bool covers(const ConceptTags& existing, const std::vector<const Chain*>& chains) {
  if (existing.matrices.size() != chains.size()) return false;
  for (const auto* chain : chains) {
    auto it = std::find_if(existing.matrices.begin(), existing.matrices.end(),
                           [&](const PresenceMatrix& m) { return m.chain_id == chain->chain_id; });
    if (it == existing.matrices.end() || it->columns() != chain->analyses.size() ||
        it->rows.size() != existing.subconcepts.size()) {
      return false;
    }
  }
  return true;
}

}  // namespace

TagRunSummary tag_run(const std::filesystem::path& run_dir, ProviderRegistry& providers,
                      const TagRunOptions& options) {
  const RunLayout layout{run_dir};
  const auto config = load_manifest_config(run_dir);
  const auto chains = load_chains(run_dir);
  const auto prompts = prompts_for(config);
  if (config.tagging.model_id.empty()) {
    throw Error(ErrorKind::ConfigError, "no tagging model configured");
  }
  TaggingContext ctx{prompts, providers, config.tagging.model_id, config.tagging.parse_retries,
                     config.tagging.temperature, config.tagging.max_tokens};

  // Each group shares one extracted tag list: a concept, or a single chain
  // when per-chain extraction is configured.
  struct Group {
    const Concept* concept_;
    std::string file_stem;
    std::vector<const Chain*> chains;
  };
  std::vector<Group> groups;
  for (const auto& c : config.concepts) {
    std::vector<const Chain*> members;
    for (const auto& chain : chains) {
      if (chain.concept_id == c.id && chain.status == ChainStatus::complete) {
        members.push_back(&chain);
      }
    }
    std::sort(members.begin(), members.end(),
              [](const Chain* a, const Chain* b) { return a->chain_id < b->chain_id; });
    if (members.empty()) continue;
    if (config.tagging.per_chain_extraction) {
      for (const auto* m : members) groups.push_back({&c, c.id + "." + m->chain_id, {m}});
    } else {
      groups.push_back({&c, c.id, members});
    }
  }

  TagRunSummary summary;
  std::filesystem::create_directories(layout.tags_dir());
  for (const auto& g : groups) {
    const auto path = layout.tags_dir() / (g.file_stem + ".json");
    if (!options.force && std::filesystem::exists(path)) {
      auto existing = concept_tags_from_json(read_json_file(path));
      if (covers(existing, g.chains)) {
        ++summary.concepts_reused;
        continue;
      }
    }
    std::vector<std::string> definitions;
    std::set<std::string> seen;
    for (const auto* chain : g.chains) {
      for (const auto& a : chain->analyses) {
        if (seen.insert(a).second) definitions.push_back(a);
      }
    }
    const auto subconcepts = extract_subconcepts(*g.concept_, definitions, ctx);
    std::vector<std::string> tag_names;
    for (const auto& s : subconcepts) tag_names.push_back(s.tag);

    struct Cell {
      std::size_t chain;
      std::size_t column;
    };
    std::vector<Cell> cells;
    std::vector<PresenceMatrix> matrices;
    for (std::size_t k = 0; k < g.chains.size(); ++k) {
      const auto cols = g.chains[k]->analyses.size();
      matrices.push_back(PresenceMatrix{g.chains[k]->chain_id, tag_names,
                                        std::vector<std::vector<bool>>(tag_names.size(),
                                                                       std::vector<bool>(cols))});
      for (std::size_t c = 0; c < cols; ++c) cells.push_back({k, c});
    }
    std::mutex m;
    run_parallel(cells.size(), options.parallelism, [&](std::size_t i) {
      const auto [k, col] = cells[i];
      const auto* chain = g.chains[k];
      auto vec = tag_definition(*g.concept_, chain->analyses[col], subconcepts, ctx,
                                chain->chain_id, static_cast<int>(col));
      std::lock_guard lock(m);
      for (std::size_t r = 0; r < vec.size(); ++r) matrices[k].rows[r][col] = vec[r];
    });
    summary.definitions_tagged += cells.size();

    ConceptTags doc{g.concept_->id, subconcepts, std::move(matrices), {}};
    doc.aggregate = aggregate_presence(doc.concept_id, doc.matrices);
    write_json_file(path, to_json_document(doc));
    ++summary.concepts_tagged;
  }
  return summary;
}

}  // namespace cxgame
