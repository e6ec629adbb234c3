#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cxgame/core.hpp"
#include "cxgame/prompts.hpp"
#include "cxgame/provider.hpp"

namespace cxgame {

struct SubConcept {
  std::string concept_id;
  std::string tag;  // snake_case
  std::string description;

  bool operator==(const SubConcept&) const = default;
};

// Rows are sub-concepts in extraction order, columns are iterations 0..n.
struct PresenceMatrix {
  std::string chain_id;
  std::vector<std::string> tags;
  std::vector<std::vector<bool>> rows;

  std::size_t columns() const { return rows.empty() ? 0 : rows.front().size(); }
};

// Per-cell count of chains with the sub-concept present.
struct AggregateMatrix {
  std::string concept_id;
  std::vector<std::string> tags;
  std::size_t chain_count = 0;
  std::vector<std::vector<int>> present;

  double fraction(std::size_t row, std::size_t column) const;
  std::size_t columns() const { return present.empty() ? 0 : present.front().size(); }
};

inline constexpr std::size_t kSubconceptFloor = 4;
inline constexpr std::size_t kSubconceptCeiling = 30;
inline constexpr std::size_t kSubconceptBandLow = 12;
inline constexpr std::size_t kSubconceptBandHigh = 16;

bool is_snake_case(std::string_view tag);

// Tags from a ```subconcepts block, deduplicated in order. Throws
// ExtractionDegenerate outside [4, 30] unique tags.
std::vector<SubConcept> parse_subconcepts(std::string_view concept_id, std::string_view raw);

// Presence vector from a ```presence block; UnparsableVerdict when the
// length differs from `expected`.
std::vector<bool> parse_presence(std::string_view raw, std::size_t expected);

struct TaggingContext {
  const PromptLibrary& prompts;
  ProviderRegistry& providers;
  std::string model_id;
  int parse_retries = 3;
  double temperature = 0.0;
  int max_tokens = 2048;
};

std::vector<SubConcept> extract_subconcepts(const Concept& concept_,
                                            const std::vector<std::string>& definitions,
                                            TaggingContext& ctx);

std::vector<bool> tag_definition(const Concept& concept_, std::string_view definition,
                                 const std::vector<SubConcept>& subconcepts, TaggingContext& ctx,
                                 std::string_view scope = "adhoc", int index = 0);

// Number of i with row[i] != row[i + 1].
std::size_t oscillation_count(const std::vector<bool>& row);

// Cellwise mean over chains of one concept; ShapeMismatch on differing tag
// lists or column counts.
AggregateMatrix aggregate_presence(std::string_view concept_id,
                                   const std::vector<PresenceMatrix>& matrices);

struct ConceptTags {
  std::string concept_id;
  std::vector<SubConcept> subconcepts;
  std::vector<PresenceMatrix> matrices;  // sorted by chain id
  AggregateMatrix aggregate;
};

json to_json_document(const ConceptTags& tags);
ConceptTags concept_tags_from_json(const json& j);

// Aggregate heatmap data: header "tag,0,1,...,n", one row per tag.
std::string aggregate_csv(const AggregateMatrix& aggregate);

struct TagRunOptions {
  bool force = false;
  int parallelism = 1;
};

struct TagRunSummary {
  std::size_t concepts_tagged = 0;
  std::size_t concepts_reused = 0;
  std::size_t definitions_tagged = 0;
};

// Writes tags/<concept_id>.json for every concept with complete chains, or
// tags/<concept_id>.<chain_id>.json per chain when extraction is per chain.
// Concepts whose file already covers every chain are not re-tagged.
TagRunSummary tag_run(const std::filesystem::path& run_dir, ProviderRegistry& providers,
                      const TagRunOptions& options);

}  // namespace cxgame
