#include "cxgame/annotation.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <random>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace cxgame {

void to_json(json& j, const AnnotationItem& v) {
  j = json{{"public_id", v.public_id},
           {"concept", v.concept_},
           {"analysis", v.analysis},
           {"ce_text", v.ce_text}};
}

void from_json(const json& j, AnnotationItem& v) {
  v.public_id = j.at("public_id").get<std::string>();
  v.concept_ = j.at("concept").get<std::string>();
  v.analysis = j.at("analysis").get<std::string>();
  v.ce_text = j.at("ce_text").get<std::string>();
}

void to_json(json& j, const HiddenIdentity& v) {
  j = json{{"chain_id", v.chain_id},
           {"concept_id", v.concept_id},
           {"step_index", v.step_index},
           {"condition", to_string(v.condition)}};
}

void from_json(const json& j, HiddenIdentity& v) {
  v.chain_id = j.at("chain_id").get<std::string>();
  v.concept_id = j.at("concept_id").get<std::string>();
  v.step_index = j.at("step_index").get<int>();
  const auto c = parse_condition(j.at("condition").get<std::string>());
  if (!c) throw Error(ErrorKind::CorruptState, "bad condition in mapping");
  v.condition = *c;
}

namespace {

std::string random_public_id(std::mt19937_64& rng) {
  return fmt::format("{:016x}{:016x}", rng(), rng());
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

AnnotationSet build_annotation_set(const std::vector<Chain>& chains,
                                   const std::vector<Concept>& concepts,
                                   const ExportRequest& request) {
  if (!is_safe_token(request.set_id)) {
    throw Error(ErrorKind::ConfigError, "set id must match [A-Za-z0-9_-]+: " + request.set_id);
  }
  if (request.step_indices.empty() || request.per_stratum < 1) {
    throw Error(ErrorKind::PreconditionViolation, "no strata requested");
  }
  std::map<std::string, const Concept*> concept_by_id;
  for (const auto& c : concepts) concept_by_id[c.id] = &c;

  std::vector<const Chain*> eligible;
  for (const auto& c : chains) {
    if (c.status != ChainStatus::complete) continue;
    if (request.condition && c.condition != *request.condition) continue;
    if (request.concept_id && c.concept_id != *request.concept_id) continue;
    eligible.push_back(&c);
  }
  std::sort(eligible.begin(), eligible.end(),
            [](const Chain* a, const Chain* b) { return a->chain_id < b->chain_id; });

  struct Picked {
    const Chain* chain;
    int step;
  };
  std::vector<Picked> picked;
  std::vector<int> strata = request.step_indices;
  std::sort(strata.begin(), strata.end());
  strata.erase(std::unique(strata.begin(), strata.end()), strata.end());
  for (int s : strata) {
    std::vector<const Chain*> candidates;
    for (const auto* c : eligible) {
      if (s >= 0 && static_cast<std::size_t>(s) < c->steps.size()) candidates.push_back(c);
    }
    if (candidates.size() < static_cast<std::size_t>(request.per_stratum)) {
      throw Error(ErrorKind::InsufficientItems,
                  fmt::format("step {} has {} candidate counterexamples, {} requested", s,
                              candidates.size(), request.per_stratum));
    }
    std::mt19937_64 rng(derive_seed(request.seed, fmt::format("stratum:{}", s)));
    std::shuffle(candidates.begin(), candidates.end(), rng);
    for (int k = 0; k < request.per_stratum; ++k) picked.push_back({candidates[k], s});
  }

  std::mt19937_64 order_rng(derive_seed(request.seed, "order:" + request.set_id));
  std::shuffle(picked.begin(), picked.end(), order_rng);

  AnnotationSet out;
  out.set_id = request.set_id;
  out.raters = request.raters;
  std::mt19937_64 id_rng(derive_seed(request.seed, "public-ids:" + request.set_id));
  for (const auto& p : picked) {
    std::string id;
    do {
      id = random_public_id(id_rng);
    } while (out.mapping.contains(id));
    const auto it = concept_by_id.find(p.chain->concept_id);
    if (it == concept_by_id.end()) {
      throw Error(ErrorKind::ConfigError, "chain concept not in config: " + p.chain->concept_id);
    }
    out.items.push_back(AnnotationItem{id, it->second->surface_form,
                                       p.chain->analyses[static_cast<std::size_t>(p.step)],
                                       p.chain->steps[static_cast<std::size_t>(p.step)].ce_text});
    out.mapping[id] =
        HiddenIdentity{p.chain->chain_id, p.chain->concept_id, p.step, p.chain->condition};
  }
  return out;
}

json items_document(const AnnotationSet& set) {
  return json{{"set_id", set.set_id}, {"N", set.items.size()}, {"items", set.items}};
}

std::vector<std::string> structural_findings(const json& items_doc,
                                             const std::vector<std::string>& chain_ids) {
  static const std::set<std::string> kTopKeys{"set_id", "N", "items"};
  static const std::set<std::string> kItemKeys{"public_id", "concept", "analysis", "ce_text"};
  std::vector<std::string> out;
  for (const auto& [key, value] : items_doc.items()) {
    if (!kTopKeys.contains(key)) out.push_back("unexpected top-level key: " + key);
  }
  if (items_doc.contains("items")) {
    for (const auto& item : items_doc["items"]) {
      for (const auto& [key, value] : item.items()) {
        if (!kItemKeys.contains(key)) out.push_back("unexpected item key: " + key);
        else if (!value.is_string()) out.push_back("non-text item field: " + key);
      }
    }
  }
  const auto text = items_doc.dump();
  const auto low = lower(text);
  for (const auto& id : chain_ids) {
    if (!id.empty() && text.find(id) != std::string::npos) out.push_back("chain id present: " + id);
  }
  for (const auto* name : {"memoryless", "with_history"}) {
    if (low.find(name) != std::string::npos) out.push_back(fmt::format("condition name: {}", name));
  }
  return out;
}

std::vector<std::string> blinding_findings(const json& items_doc,
                                           const std::vector<std::string>& chain_ids) {
  auto out = structural_findings(items_doc, chain_ids);
  const auto low = lower(items_doc.dump());
  for (const auto* word : {"iteration", "condition", "step_index"}) {
    if (low.find(word) != std::string::npos) out.push_back(fmt::format("token: {}", word));
  }
  return out;
}

void write_annotation_set(const std::filesystem::path& dir, const AnnotationSet& set) {
  const auto doc = items_document(set);
  std::vector<std::string> chain_ids;
  for (const auto& [id, hidden] : set.mapping) chain_ids.push_back(hidden.chain_id);
  const auto hard = structural_findings(doc, chain_ids);
  if (!hard.empty()) throw Error(ErrorKind::BlindingViolation, hard.front());
  for (const auto& f : blinding_findings(doc, chain_ids)) {
    spdlog::warn("items of set {} contain {}", set.set_id, f);
  }
  std::filesystem::create_directories(dir / "responses");
  write_json_file(dir / "items.json", doc);
  write_json_file(dir / "mapping.sealed.json",
                  json{{"set_id", set.set_id}, {"mapping", set.mapping}});
  write_json_file(dir / "raters.json", json{{"set_id", set.set_id}, {"raters", set.raters}});
}

void to_json(json& j, const RatingResponse& v) {
  j = json{{"public_id", v.public_id},
           {"rater_id", v.rater_id},
           {"category", to_string(v.category)},
           {"importance", v.importance},
           {"submitted_at", v.submitted_at}};
  j["comment"] = v.comment ? json(*v.comment) : json(nullptr);
  j["alternative_ce"] = v.alternative_ce ? json(*v.alternative_ce) : json(nullptr);
}

RatingResponse parse_response(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::ValidationError, "response must be an object");
  auto text_field = [&](const char* key, bool required) -> std::optional<std::string> {
    if (!j.contains(key) || j[key].is_null()) {
      if (required) throw Error(ErrorKind::ValidationError, fmt::format("missing {}", key));
      return std::nullopt;
    }
    if (!j[key].is_string()) {
      throw Error(ErrorKind::ValidationError, fmt::format("{} must be a string", key));
    }
    return j[key].get<std::string>();
  };
  RatingResponse out;
  out.public_id = *text_field("public_id", true);
  out.rater_id = text_field("rater_id", false).value_or("");
  const auto category = *text_field("category", true);
  const auto parsed = parse_category(category);
  if (!parsed) throw Error(ErrorKind::ValidationError, "unknown category: " + category);
  out.category = *parsed;
  if (!j.contains("importance") || !j["importance"].is_number_integer()) {
    throw Error(ErrorKind::ValidationError, "importance must be an integer 1-5");
  }
  out.importance = j["importance"].get<int>();
  if (out.importance < 1 || out.importance > 5) {
    throw Error(ErrorKind::ValidationError,
                fmt::format("importance {} out of range 1-5", out.importance));
  }
  out.comment = text_field("comment", false);
  out.alternative_ce = text_field("alternative_ce", false);
  if (out.comment && out.comment->empty()) out.comment.reset();
  if (out.alternative_ce && out.alternative_ce->empty()) out.alternative_ce.reset();
  out.submitted_at = text_field("submitted_at", false).value_or("");
  return out;
}

std::string Progress::label() const {
  return fmt::format("Item {} of {}", std::min(answered + 1, total), total);
}

bool is_safe_token(std::string_view s) {
  return !s.empty() && s.size() <= 128 && std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
  });
}

AnnotationStore::AnnotationStore(std::filesystem::path set_dir, std::function<std::string()> clock)
    : dir_(std::move(set_dir)), clock_(std::move(clock)) {
  const auto doc = read_json_file(dir_ / "items.json");
  set_id_ = doc.at("set_id").get<std::string>();
  items_ = doc.at("items").get<std::vector<AnnotationItem>>();
  for (std::size_t i = 0; i < items_.size(); ++i) position_[items_[i].public_id] = i;
  raters_ = read_json_file(dir_ / "raters.json").at("raters").get<std::vector<std::string>>();
}

bool AnnotationStore::has_rater(std::string_view rater) const {
  return std::find(raters_.begin(), raters_.end(), rater) != raters_.end();
}

AnnotationStore::Session& AnnotationStore::session(const std::string& rater) {
  if (!has_rater(rater)) throw Error(ErrorKind::UnknownItem, "unknown rater: " + rater);
  std::lock_guard lock(sessions_mutex_);
  auto& slot = sessions_[rater];
  if (!slot) {
    slot = std::make_unique<Session>();
    const auto path = dir_ / "responses" / (rater + ".jsonl");
    const auto contents = read_jsonl(path);
    for (const auto& j : contents.records) {
      if (j.contains("public_id") && j["public_id"].is_string()) {
        const auto id = j["public_id"].get<std::string>();
        if (position_.contains(id)) slot->answered.insert(id);
      }
    }
    std::filesystem::create_directories(path.parent_path());
    slot->log = std::make_unique<JsonlAppender>(path);
  }
  return *slot;
}

NextItem AnnotationStore::next_item(const std::string& rater) {
  auto& s = session(rater);
  std::lock_guard lock(s.mutex);
  for (const auto& item : items_) {
    if (!s.answered.contains(item.public_id)) {
      return NextItem{item, Progress{s.answered.size(), items_.size()}};
    }
  }
  throw Error(ErrorKind::SessionComplete,
              fmt::format("rater {} has answered all {} items", rater, items_.size()));
}

Progress AnnotationStore::submit(const std::string& rater, RatingResponse response) {
  if (!response.rater_id.empty() && response.rater_id != rater) {
    throw Error(ErrorKind::ValidationError, "rater_id does not match the session");
  }
  auto& s = session(rater);
  if (!position_.contains(response.public_id)) {
    throw Error(ErrorKind::UnknownItem, "unknown item: " + response.public_id);
  }
  response.rater_id = rater;
  if (response.submitted_at.empty()) response.submitted_at = clock_();
  std::lock_guard lock(s.mutex);
  s.log->append(json(response));
  s.answered.insert(response.public_id);
  return Progress{s.answered.size(), items_.size()};
}

Progress AnnotationStore::progress(const std::string& rater) {
  auto& s = session(rater);
  std::lock_guard lock(s.mutex);
  return Progress{s.answered.size(), items_.size()};
}

ResponseLog load_responses(const std::filesystem::path& set_dir) {
  ResponseLog out;
  const auto dir = set_dir / "responses";
  if (!std::filesystem::exists(dir)) return out;
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".jsonl") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::map<std::pair<std::string, std::string>, RatingResponse> latest;
  for (const auto& f : files) {
    const auto rater = f.stem().string();
    const auto text = read_text_file(f);
    std::size_t line_no = 0, pos = 0;
    while (pos < text.size()) {
      auto eol = text.find('\n', pos);
      if (eol == std::string::npos) eol = text.size();
      const auto line = text.substr(pos, eol - pos);
      pos = eol + 1;
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception&) {
        out.quarantined.push_back({line_no, line, f.filename().string() + ": not valid JSON"});
        continue;
      }
      try {
        auto r = parse_response(j);
        if (r.rater_id.empty()) r.rater_id = rater;
        out.history.push_back(r);
        latest[{r.public_id, r.rater_id}] = std::move(r);
      } catch (const Error& e) {
        out.quarantined.push_back({line_no, line, f.filename().string() + ": " + e.what()});
      }
    }
  }
  for (auto& [key, r] : latest) out.latest.push_back(std::move(r));
  return out;
}

std::map<std::string, HiddenIdentity> load_mapping(const std::filesystem::path& set_dir) {
  return read_json_file(set_dir / "mapping.sealed.json")
      .at("mapping")
      .get<std::map<std::string, HiddenIdentity>>();
}

RatingTable unblind(const std::map<std::string, HiddenIdentity>& mapping,
                    const std::vector<RatingResponse>& responses) {
  RatingTable table;
  for (const auto& r : responses) {
    const auto it = mapping.find(r.public_id);
    if (it == mapping.end()) {
      throw Error(ErrorKind::MappingGap, "response names an unmapped item: " + r.public_id);
    }
    table.add(RatingRow{item_id_for(it->second.chain_id, it->second.step_index), r.rater_id,
                        coarse_validity(r.category), r.importance, r.category});
  }
  return table;
}

RatingTable unblind(const std::filesystem::path& set_dir) {
  const auto log = load_responses(set_dir);
  for (const auto& q : log.quarantined) {
    spdlog::warn("quarantined response line {}: {}", q.line_number, q.reason);
  }
  return unblind(load_mapping(set_dir), log.latest);
}

IngestResult ingest_csv(const std::filesystem::path& set_dir, const std::filesystem::path& csv,
                        std::function<std::string()> clock) {
  const auto rows = parse_csv(read_text_file(csv));
  if (rows.empty()) throw Error(ErrorKind::ValidationError, "empty CSV: " + csv.string());
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < rows[0].size(); ++i) column[rows[0][i]] = i;
  for (const auto* required : {"public_id", "rater_id", "category", "importance"}) {
    if (!column.contains(required)) {
      throw Error(ErrorKind::ValidationError, fmt::format("CSV lacks column {}", required));
    }
  }
  AnnotationStore store(set_dir, std::move(clock));
  IngestResult out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.empty() || (row.size() == 1 && row[0].empty())) continue;
    const auto line_no = r + 1;
    auto cell = [&](const char* name) -> std::optional<std::string> {
      auto it = column.find(name);
      if (it == column.end() || it->second >= row.size() || row[it->second].empty()) {
        return std::nullopt;
      }
      return row[it->second];
    };
    try {
      json j{{"public_id", cell("public_id").value_or("")},
             {"rater_id", cell("rater_id").value_or("")},
             {"category", cell("category").value_or("")}};
      const auto imp = cell("importance").value_or("");
      int importance = 0;
      const auto [ptr, ec] = std::from_chars(imp.data(), imp.data() + imp.size(), importance);
      if (ec != std::errc{} || ptr != imp.data() + imp.size()) {
        throw Error(ErrorKind::ValidationError, "importance must be an integer 1-5");
      }
      j["importance"] = importance;
      for (const auto* opt : {"comment", "alternative_ce", "submitted_at"}) {
        if (auto v = cell(opt)) j[opt] = *v;
      }
      auto response = parse_response(j);
      if (response.rater_id.empty()) throw Error(ErrorKind::ValidationError, "missing rater_id");
      const auto rater = response.rater_id;
      store.submit(rater, std::move(response));
      ++out.accepted;
    } catch (const Error& e) {
      out.rejected.push_back({line_no, csv_row(row), e.what()});
    }
  }
  return out;
}

}  // namespace cxgame
