#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cxgame/core.hpp"

namespace cxgame {

namespace detail {

template <typename A, typename B>
void require_paired(const A& a, const B& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::LengthMismatch,
                "lengths differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  if (a.empty()) throw Error(ErrorKind::EmptyInput, "no items");
}

}  // namespace detail

// Fraction of positions with a[i] == b[i].
template <typename T>
double percent_agreement(const std::vector<T>& a, const std::vector<T>& b) {
  detail::require_paired(a, b);
  std::size_t matches = 0;
  for (std::size_t i = 0; i < a.size(); ++i) matches += a[i] == b[i];
  return static_cast<double>(matches) / static_cast<double>(a.size());
}

// Cohen's kappa over any label type; nullopt when chance agreement is 1.
// Use bool labels for coarse validity, VerdictCategory for the 4-way form.
template <typename T>
std::optional<double> cohen_kappa(const std::vector<T>& a, const std::vector<T>& b) {
  detail::require_paired(a, b);
  std::map<T, std::pair<std::size_t, std::size_t>> marginals;
  std::size_t matches = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++marginals[a[i]].first;
    ++marginals[b[i]].second;
    matches += a[i] == b[i];
  }
  const auto n = static_cast<double>(a.size());
  std::size_t expected_pairs = 0;
  for (const auto& [label, counts] : marginals) expected_pairs += counts.first * counts.second;
  if (expected_pairs == a.size() * a.size()) return std::nullopt;
  const double po = static_cast<double>(matches) / n;
  const double pe = static_cast<double>(expected_pairs) / (n * n);
  return (po - pe) / (1.0 - pe);
}

// Product-moment correlation; nullopt when either side has zero variance.
// Throws TooFewItems below two items.
std::optional<double> pearson_r(const std::vector<double>& x, const std::vector<double>& y);

enum class ConsensusLabel { valid, invalid, excluded };

std::string_view to_string(ConsensusLabel v);

// Strict majority of at least two ratings, otherwise excluded.
ConsensusLabel consensus(const std::vector<bool>& ratings);
std::vector<ConsensusLabel> consensus(const std::vector<std::vector<bool>>& per_item);

enum class Statistic { kappa, agreement, pearson };

std::string_view to_string(Statistic v);
std::optional<Statistic> parse_statistic(std::string_view s);

// For kappa and agreement, `a` and `b` are labels compared for equality
// (0/1 for coarse validity).
struct PairedItem {
  double a = 0;
  double b = 0;
};

std::optional<double> evaluate(Statistic statistic, std::span<const PairedItem> items);

struct BootstrapInterval {
  double lo = 0;
  double hi = 0;
  double estimate = 0;  // on the full sample
  int resamples = 0;
  int skipped = 0;      // degenerate resamples
};

// Percentile interval over item-level resamples with replacement. Throws
// UndefinedStatistic when the full sample is degenerate and
// TooManyDegenerate when more than half the resamples are.
BootstrapInterval bootstrap_ci(std::span<const PairedItem> items, Statistic statistic,
                               int resamples, double level, std::uint64_t seed);

// Linear interpolation between order statistics (the common "type 7").
double quantile_sorted(std::span<const double> sorted, double p);

struct RatingRow {
  std::string item_id;
  std::string rater_id;
  bool coarse_valid = false;
  std::optional<int> importance;
  std::optional<VerdictCategory> category;
};

void to_json(json& j, const RatingRow& v);
void from_json(const json& j, RatingRow& v);

// At most one row per (item, rater). Humans and model judges share the
// table and are told apart by rater id.
class RatingTable {
 public:
  // ValidationError on a duplicate key or importance outside 1..5.
  void add(RatingRow row);

  const std::vector<RatingRow>& rows() const { return rows_; }
  const RatingRow* find(std::string_view item_id, std::string_view rater_id) const;
  std::vector<std::string> raters() const;
  std::vector<std::string> items() const;
  std::vector<std::string> items_rated_by(std::string_view rater_id) const;
  bool empty() const { return rows_.empty(); }

 private:
  std::vector<RatingRow> rows_;
  std::map<std::pair<std::string, std::string>, std::size_t> index_;
};

RatingTable load_rating_table(const std::filesystem::path& jsonl);
std::string rating_table_jsonl(const RatingTable& table);

// Judge verdicts as table rows, item id "<chain_id>:<step_index>".
void add_judgments(RatingTable& table, const std::vector<CeJudgment>& judgments);

std::string item_id_for(std::string_view chain_id, int step_index);

struct DisagreementCounts {
  std::size_t human_reject_model_accept = 0;
  std::size_t human_accept_model_reject = 0;

  std::size_t total() const { return human_reject_model_accept + human_accept_model_reject; }
  bool operator==(const DisagreementCounts&) const = default;
};

// Over every (item, human) pair; MissingModelVerdict when the model did not
// rate an item some human rated.
DisagreementCounts disagreement_direction(const RatingTable& table,
                                          const std::vector<std::string>& humans,
                                          std::string_view model);

struct PooledAgreement {
  std::size_t matches = 0;
  std::size_t pairs = 0;
  double agreement() const { return static_cast<double>(matches) / static_cast<double>(pairs); }
};

// Human-vs-model agreement pooled over (item, human) pairs.
PooledAgreement pooled_agreement(const RatingTable& table, const std::vector<std::string>& humans,
                                 std::string_view model);

struct AgreementReport {
  std::string pair;
  std::size_t n = 0;
  double agreement = 0;
  std::optional<double> kappa;
  std::optional<double> kappa_lo;
  std::optional<double> kappa_hi;
  std::optional<double> r_imp;
  std::size_t n_imp = 0;
};

struct AgreementOptions {
  int resamples = 2000;
  double level = 0.95;
  std::uint64_t seed = 0;
  bool with_ci = true;
};

// Consensus vs each model, each human vs each model, then every human pair.
// Items are restricted per pair to those both sides rated; r_imp further to
// items where both sides gave an importance. Consensus importance is the
// mean of the human scores on the item.
std::vector<AgreementReport> agreement_table(const RatingTable& table,
                                             const std::vector<std::string>& humans,
                                             const std::vector<std::string>& models,
                                             const AgreementOptions& options);

std::string agreement_csv(const std::vector<AgreementReport>& reports);

// Mean over raters of each rater's share of valid verdicts.
std::optional<double> rater_mean_validity(const RatingTable& table,
                                          const std::vector<std::string>& raters);

enum class Grouping { pooled, by_condition };

struct PositionValidity {
  std::string group;  // "all" or a condition name
  int position = 0;
  std::size_t valid = 0;
  std::size_t total = 0;

  double fraction() const { return static_cast<double>(valid) / static_cast<double>(total); }
};

struct ValidityCurve {
  std::vector<PositionValidity> points;  // sorted by group, position
  std::vector<std::string> notes;        // requested positions with no verdicts
};

ValidityCurve validity_by_position(const std::vector<CeJudgment>& judgments, Grouping grouping,
                                   const std::vector<int>& requested = {});

struct ChainValidity {
  std::string chain_id;
  std::size_t valid = 0;
  std::size_t total = 0;

  double rate() const { return static_cast<double>(valid) / static_cast<double>(total); }
};

struct ConceptValidity {
  std::string concept_id;
  std::vector<ChainValidity> chains;  // sorted by chain id
  double mean = 0;                    // mean of chain rates
};

// Sorted by descending mean, then concept id.
std::vector<ConceptValidity> validity_by_concept(const std::vector<CeJudgment>& judgments);

struct SeriesPoint {
  std::string group;
  int position = 0;
  std::size_t n = 0;
  double mean = 0;
};

// Mean analysis word count at each iteration.
std::vector<SeriesPoint> length_series(const std::vector<Chain>& chains,
                                       Grouping grouping = Grouping::pooled);

struct ScorePoint {
  std::string group;
  int position = 0;
  std::size_t n = 0;
  double accuracy = 0;
  double conciseness = 0;
};

std::vector<ScorePoint> score_series(const std::vector<AnalysisJudgment>& judgments,
                                     Grouping grouping = Grouping::by_condition);

}  // namespace cxgame
