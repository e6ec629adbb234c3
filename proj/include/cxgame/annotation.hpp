#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cxgame/core.hpp"
#include "cxgame/io.hpp"
#include "cxgame/stats.hpp"

namespace cxgame {

// What a rater sees. Nothing here may identify the chain, step or condition.
struct AnnotationItem {
  std::string public_id;
  std::string concept_;  // surface form
  std::string analysis;
  std::string ce_text;

  bool operator==(const AnnotationItem&) const = default;
};

// Sealed side of an item, kept in mapping.sealed.json only.
struct HiddenIdentity {
  std::string chain_id;
  std::string concept_id;
  int step_index = 0;
  Condition condition = Condition::memoryless;

  auto operator<=>(const HiddenIdentity&) const = default;
};

void to_json(json& j, const AnnotationItem& v);
void from_json(const json& j, AnnotationItem& v);
void to_json(json& j, const HiddenIdentity& v);
void from_json(const json& j, HiddenIdentity& v);

struct ExportRequest {
  std::string set_id;
  std::vector<int> step_indices;  // strata
  int per_stratum = 20;
  std::uint64_t seed = 0;
  std::optional<Condition> condition;
  std::optional<std::string> concept_id;
  std::vector<std::string> raters{"H1", "H2", "H3", "H4", "H5"};
};

struct AnnotationSet {
  std::string set_id;
  std::vector<AnnotationItem> items;  // presentation order
  std::map<std::string, HiddenIdentity> mapping;
  std::vector<std::string> raters;
};

// Samples `per_stratum` CEs per requested step index from complete chains,
// assigns random public ids and shuffles. InsufficientItems when a stratum
// has fewer candidates than requested. Pure given the seed.
AnnotationSet build_annotation_set(const std::vector<Chain>& chains,
                                   const std::vector<Concept>& concepts,
                                   const ExportRequest& request);

// Writes <dir>/items.json, <dir>/mapping.sealed.json and <dir>/raters.json.
// Refuses (BlindingViolation) to write items that fail the audit.
void write_annotation_set(const std::filesystem::path& dir, const AnnotationSet& set);

json items_document(const AnnotationSet& set);

// Audit of a serialized items document: item keys beyond the display
// fields, chain ids, condition names, or the words "iteration" and
// "condition". Returns one line per finding.
std::vector<std::string> blinding_findings(const json& items_doc,
                                           const std::vector<std::string>& chain_ids);

// The structural part of the audit, which must hold for any corpus.
std::vector<std::string> structural_findings(const json& items_doc,
                                             const std::vector<std::string>& chain_ids);

struct RatingResponse {
  std::string public_id;
  std::string rater_id;
  VerdictCategory category = VerdictCategory::invalid_unclear;
  int importance = 1;
  std::optional<std::string> comment;
  std::optional<std::string> alternative_ce;
  std::string submitted_at;
};

void to_json(json& j, const RatingResponse& v);

// ValidationError on a missing or bad category, importance outside 1..5 or
// wrongly typed fields.
RatingResponse parse_response(const json& j);

struct Progress {
  std::size_t answered = 0;
  std::size_t total = 0;
  bool complete() const { return answered >= total; }
  std::string label() const;  // "Item X of N", X = answered + 1
};

struct NextItem {
  AnnotationItem item;
  Progress progress;
};

// Rater sessions over one exported set. Never reads the sealed mapping.
class AnnotationStore {
 public:
  explicit AnnotationStore(std::filesystem::path set_dir,
                           std::function<std::string()> clock = utc_timestamp);

  const std::string& set_id() const { return set_id_; }
  std::size_t size() const { return items_.size(); }
  const std::vector<std::string>& raters() const { return raters_; }
  bool has_rater(std::string_view rater) const;

  // Lowest-index unanswered item; SessionComplete when none is left.
  NextItem next_item(const std::string& rater);

  // Appends to responses/<rater>.jsonl. A resubmission supersedes the
  // earlier answer; both stay in the log.
  Progress submit(const std::string& rater, RatingResponse response);
  Progress progress(const std::string& rater);

 private:
  struct Session {
    std::mutex mutex;
    std::set<std::string> answered;
    std::unique_ptr<JsonlAppender> log;
  };
  Session& session(const std::string& rater);

  std::filesystem::path dir_;
  std::function<std::string()> clock_;
  std::string set_id_;
  std::vector<AnnotationItem> items_;
  std::map<std::string, std::size_t, std::less<>> position_;
  std::vector<std::string> raters_;
  std::mutex sessions_mutex_;
  std::map<std::string, std::unique_ptr<Session>> sessions_;
};

struct ResponseLog {
  std::vector<RatingResponse> latest;   // one per (public_id, rater)
  std::vector<RatingResponse> history;  // every accepted line
  std::vector<QuarantinedLine> quarantined;
};

// Reads every responses/*.jsonl under a set directory. Malformed lines are
// quarantined with their file and line number.
ResponseLog load_responses(const std::filesystem::path& set_dir);

// Joins latest responses with the sealed mapping. MappingGap when a
// response names an unmapped public id.
RatingTable unblind(const std::filesystem::path& set_dir);
RatingTable unblind(const std::map<std::string, HiddenIdentity>& mapping,
                    const std::vector<RatingResponse>& responses);

std::map<std::string, HiddenIdentity> load_mapping(const std::filesystem::path& set_dir);

struct IngestResult {
  std::size_t accepted = 0;
  std::vector<QuarantinedLine> rejected;
};

// Offline spreadsheet path. Columns: public_id, rater_id, category,
// importance, comment, alternative_ce, submitted_at. Valid rows are
// appended to the response logs; invalid ones are reported by line.
IngestResult ingest_csv(const std::filesystem::path& set_dir, const std::filesystem::path& csv,
                        std::function<std::string()> clock = utc_timestamp);

bool is_safe_token(std::string_view s);

class AnnotationServer {
 public:
  explicit AnnotationServer(std::filesystem::path annotation_root);
  ~AnnotationServer();
  AnnotationServer(const AnnotationServer&) = delete;
  AnnotationServer& operator=(const AnnotationServer&) = delete;

  // Returns the bound port. Port 0 picks a free one.
  int bind(const std::string& host, int port);
  void listen();  // blocks until stop()
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cxgame
