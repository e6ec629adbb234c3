#include "cxgame/stats.hpp"

#include <algorithm>
#include <functional>
#include <random>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cxgame/io.hpp"

namespace cxgame {

std::optional<double> pearson_r(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) {
    throw Error(ErrorKind::LengthMismatch,
                fmt::format("lengths differ: {} vs {}", x.size(), y.size()));
  }
  if (x.size() < 2) throw Error(ErrorKind::TooFewItems, "pearson_r needs at least two items");
  const auto n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::string_view to_string(ConsensusLabel v) {
  switch (v) {
    case ConsensusLabel::valid: return "valid";
    case ConsensusLabel::invalid: return "invalid";
    case ConsensusLabel::excluded: return "excluded";
  }
  return "excluded";
}

ConsensusLabel consensus(const std::vector<bool>& ratings) {
  if (ratings.size() < 2) return ConsensusLabel::excluded;
  const auto yes = static_cast<std::size_t>(std::count(ratings.begin(), ratings.end(), true));
  const auto no = ratings.size() - yes;
  if (yes == no) return ConsensusLabel::excluded;
  return yes > no ? ConsensusLabel::valid : ConsensusLabel::invalid;
}

std::vector<ConsensusLabel> consensus(const std::vector<std::vector<bool>>& per_item) {
  std::vector<ConsensusLabel> out;
  out.reserve(per_item.size());
  for (const auto& r : per_item) out.push_back(consensus(r));
  return out;
}

std::string_view to_string(Statistic v) {
  switch (v) {
    case Statistic::kappa: return "kappa";
    case Statistic::agreement: return "agreement";
    case Statistic::pearson: return "pearson";
  }
  return "kappa";
}

std::optional<Statistic> parse_statistic(std::string_view s) {
  if (s == "kappa") return Statistic::kappa;
  if (s == "agreement") return Statistic::agreement;
  if (s == "pearson") return Statistic::pearson;
  return std::nullopt;
}

std::optional<double> evaluate(Statistic statistic, std::span<const PairedItem> items) {
  std::vector<double> a, b;
  a.reserve(items.size());
  b.reserve(items.size());
  for (const auto& it : items) {
    a.push_back(it.a);
    b.push_back(it.b);
  }
  switch (statistic) {
    case Statistic::kappa: return cohen_kappa(a, b);
    case Statistic::agreement: return percent_agreement(a, b);
    case Statistic::pearson: return pearson_r(a, b);
  }
  return std::nullopt;
}

double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw Error(ErrorKind::EmptyInput, "quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * std::clamp(p, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

BootstrapInterval bootstrap_ci(std::span<const PairedItem> items, Statistic statistic,
                               int resamples, double level, std::uint64_t seed) {
  if (resamples < 1) throw Error(ErrorKind::PreconditionViolation, "resamples must be >= 1");
  if (!(level > 0 && level < 1)) {
    throw Error(ErrorKind::PreconditionViolation, "level must lie in (0, 1)");
  }
  if (items.empty()) throw Error(ErrorKind::EmptyInput, "no items");
  const auto full = evaluate(statistic, items);
  if (!full) {
    throw Error(ErrorKind::UndefinedStatistic,
                fmt::format("{} is undefined on the full sample", to_string(statistic)));
  }
  BootstrapInterval out;
  out.estimate = *full;
  out.resamples = resamples;

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, items.size() - 1);
  std::vector<PairedItem> sample(items.size());
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(resamples));
  for (int r = 0; r < resamples; ++r) {
    for (auto& s : sample) s = items[pick(rng)];
    if (auto v = evaluate(statistic, sample)) {
      values.push_back(*v);
    } else {
      ++out.skipped;
    }
  }
  if (out.skipped * 2 > resamples) {
    throw Error(ErrorKind::TooManyDegenerate,
                fmt::format("{} of {} resamples degenerate", out.skipped, resamples));
  }
  std::sort(values.begin(), values.end());
  const double tail = (1.0 - level) / 2.0;
  out.lo = quantile_sorted(values, tail);
  out.hi = quantile_sorted(values, 1.0 - tail);
  return out;
}

void to_json(json& j, const RatingRow& v) {
  j = json{{"item_id", v.item_id}, {"rater_id", v.rater_id}, {"coarse_valid", v.coarse_valid}};
  j["importance"] = v.importance ? json(*v.importance) : json(nullptr);
  j["category"] = v.category ? json(std::string(to_string(*v.category))) : json(nullptr);
}

void from_json(const json& j, RatingRow& v) {
  v.item_id = j.at("item_id").get<std::string>();
  v.rater_id = j.at("rater_id").get<std::string>();
  v.category.reset();
  if (j.contains("category") && !j["category"].is_null()) {
    const auto name = j["category"].get<std::string>();
    v.category = parse_category(name);
    if (!v.category) throw Error(ErrorKind::ValidationError, "unknown category: " + name);
  }
  if (j.contains("coarse_valid")) {
    v.coarse_valid = j["coarse_valid"].get<bool>();
    if (v.category && coarse_validity(*v.category) != v.coarse_valid) {
      throw Error(ErrorKind::ValidationError,
                  fmt::format("coarse_valid disagrees with category for {}/{}", v.item_id,
                              v.rater_id));
    }
  } else if (v.category) {
    v.coarse_valid = coarse_validity(*v.category);
  } else {
    throw Error(ErrorKind::ValidationError, "rating has neither category nor coarse_valid");
  }
  v.importance.reset();
  if (j.contains("importance") && !j["importance"].is_null()) {
    v.importance = j["importance"].get<int>();
  }
}

void RatingTable::add(RatingRow row) {
  if (row.importance && (*row.importance < 1 || *row.importance > 5)) {
    throw Error(ErrorKind::ValidationError,
                fmt::format("importance {} out of range 1-5", *row.importance));
  }
  auto key = std::make_pair(row.item_id, row.rater_id);
  if (index_.contains(key)) {
    throw Error(ErrorKind::ValidationError,
                fmt::format("duplicate rating for item {} by {}", row.item_id, row.rater_id));
  }
  index_.emplace(std::move(key), rows_.size());
  rows_.push_back(std::move(row));
}

const RatingRow* RatingTable::find(std::string_view item_id, std::string_view rater_id) const {
  auto it = index_.find({std::string(item_id), std::string(rater_id)});
  return it == index_.end() ? nullptr : &rows_[it->second];
}

std::vector<std::string> RatingTable::raters() const {
  std::set<std::string> s;
  for (const auto& r : rows_) s.insert(r.rater_id);
  return {s.begin(), s.end()};
}

std::vector<std::string> RatingTable::items() const {
  std::set<std::string> s;
  for (const auto& r : rows_) s.insert(r.item_id);
  return {s.begin(), s.end()};
}

std::vector<std::string> RatingTable::items_rated_by(std::string_view rater_id) const {
  std::set<std::string> s;
  for (const auto& r : rows_) {
    if (r.rater_id == rater_id) s.insert(r.item_id);
  }
  return {s.begin(), s.end()};
}

RatingTable load_rating_table(const std::filesystem::path& jsonl) {
  const auto contents = read_jsonl(jsonl);
  for (const auto& q : contents.quarantined) {
    spdlog::warn("{}:{}: {}", jsonl.string(), q.line_number, q.reason);
  }
  RatingTable table;
  for (const auto& j : contents.records) table.add(j.get<RatingRow>());
  return table;
}

std::string rating_table_jsonl(const RatingTable& table) {
  std::string out;
  for (const auto& r : table.rows()) out += json(r).dump() + "\n";
  return out;
}

std::string item_id_for(std::string_view chain_id, int step_index) {
  return fmt::format("{}:{}", chain_id, step_index);
}

void add_judgments(RatingTable& table, const std::vector<CeJudgment>& judgments) {
  for (const auto& j : judgments) {
    table.add(RatingRow{item_id_for(j.chain_id, j.step_index), j.judge_model_id,
                        j.verdict.coarse_valid, j.verdict.importance, j.verdict.category});
  }
}

DisagreementCounts disagreement_direction(const RatingTable& table,
                                          const std::vector<std::string>& humans,
                                          std::string_view model) {
  DisagreementCounts out;
  for (const auto& h : humans) {
    for (const auto& item : table.items_rated_by(h)) {
      const auto* m = table.find(item, model);
      if (!m) {
        throw Error(ErrorKind::MissingModelVerdict,
                    fmt::format("{} has no verdict on item {}", model, item));
      }
      const bool human_valid = table.find(item, h)->coarse_valid;
      if (human_valid == m->coarse_valid) continue;
      if (m->coarse_valid) ++out.human_reject_model_accept;
      else ++out.human_accept_model_reject;
    }
  }
  return out;
}

PooledAgreement pooled_agreement(const RatingTable& table, const std::vector<std::string>& humans,
                                 std::string_view model) {
  PooledAgreement out;
  for (const auto& h : humans) {
    for (const auto& item : table.items_rated_by(h)) {
      const auto* m = table.find(item, model);
      if (!m) continue;
      ++out.pairs;
      out.matches += table.find(item, h)->coarse_valid == m->coarse_valid;
    }
  }
  if (out.pairs == 0) throw Error(ErrorKind::EmptyInput, "no human/model pairs");
  return out;
}

namespace {

struct Label {
  bool valid = false;
  std::optional<double> importance;
};

using Source = std::function<std::optional<Label>(const std::string&)>;

Source rater_source(const RatingTable& table, std::string rater) {
  return [&table, rater = std::move(rater)](const std::string& item) -> std::optional<Label> {
    const auto* r = table.find(item, rater);
    if (!r) return std::nullopt;
    return Label{r->coarse_valid,
                 r->importance ? std::optional<double>(*r->importance) : std::nullopt};
  };
}

Source consensus_source(const RatingTable& table, const std::vector<std::string>& humans) {
  return [&table, &humans](const std::string& item) -> std::optional<Label> {
    std::vector<bool> votes;
    double importance_sum = 0;
    int importance_n = 0;
    for (const auto& h : humans) {
      if (const auto* r = table.find(item, h)) {
        votes.push_back(r->coarse_valid);
        if (r->importance) {
          importance_sum += *r->importance;
          ++importance_n;
        }
      }
    }
    const auto label = consensus(votes);
    if (label == ConsensusLabel::excluded) return std::nullopt;
    return Label{label == ConsensusLabel::valid,
                 importance_n ? std::optional<double>(importance_sum / importance_n)
                              : std::nullopt};
  };
}

std::optional<AgreementReport> compare(std::string pair, const std::vector<std::string>& universe,
                                       const Source& x, const Source& y,
                                       const AgreementOptions& options) {
  std::vector<bool> a, b;
  std::vector<double> ia, ib;
  std::vector<PairedItem> paired;
  for (const auto& item : universe) {
    const auto lx = x(item);
    const auto ly = y(item);
    if (!lx || !ly) continue;
    a.push_back(lx->valid);
    b.push_back(ly->valid);
    paired.push_back({lx->valid ? 1.0 : 0.0, ly->valid ? 1.0 : 0.0});
    if (lx->importance && ly->importance) {
      ia.push_back(*lx->importance);
      ib.push_back(*ly->importance);
    }
  }
  if (a.empty()) return std::nullopt;
  AgreementReport out;
  out.pair = std::move(pair);
  out.n = a.size();
  out.agreement = percent_agreement(a, b);
  out.kappa = cohen_kappa(a, b);
  out.n_imp = ia.size();
  if (ia.size() >= 2) out.r_imp = pearson_r(ia, ib);
  if (options.with_ci && out.kappa) {
    try {
      const auto ci = bootstrap_ci(paired, Statistic::kappa, options.resamples, options.level,
                                   derive_seed(options.seed, "agreement:" + out.pair));
      out.kappa_lo = ci.lo;
      out.kappa_hi = ci.hi;
    } catch (const Error& e) {
      spdlog::warn("no kappa interval for {}: {}", out.pair, e.what());
    }
  }
  return out;
}

}  // namespace

std::vector<AgreementReport> agreement_table(const RatingTable& table,
                                             const std::vector<std::string>& humans,
                                             const std::vector<std::string>& models,
                                             const AgreementOptions& options) {
  std::set<std::string> universe_set;
  for (const auto& h : humans) {
    for (auto& item : table.items_rated_by(h)) universe_set.insert(std::move(item));
  }
  const std::vector<std::string> universe(universe_set.begin(), universe_set.end());

  std::vector<AgreementReport> out;
  auto push = [&](std::optional<AgreementReport> r) {
    if (r) out.push_back(std::move(*r));
  };
  const auto cons = consensus_source(table, humans);
  for (const auto& m : models) {
    push(compare(fmt::format("Hum. cons. -- {}", m), universe, cons, rater_source(table, m),
                 options));
  }
  for (const auto& m : models) {
    for (const auto& h : humans) {
      push(compare(fmt::format("{} -- {}", h, m), universe, rater_source(table, h),
                   rater_source(table, m), options));
    }
  }
  for (std::size_t i = 0; i < humans.size(); ++i) {
    for (std::size_t k = i + 1; k < humans.size(); ++k) {
      push(compare(fmt::format("{} -- {}", humans[i], humans[k]), universe,
                   rater_source(table, humans[i]), rater_source(table, humans[k]), options));
    }
  }
  return out;
}

std::string agreement_csv(const std::vector<AgreementReport>& reports) {
  std::string out =
      csv_row({"pair", "agreement", "kappa", "r_imp", "n", "n_imp", "kappa_lo", "kappa_hi"});
  for (const auto& r : reports) {
    out += csv_row({r.pair, format_number(r.agreement), format_optional(r.kappa),
                    format_optional(r.r_imp), std::to_string(r.n), std::to_string(r.n_imp),
                    format_optional(r.kappa_lo), format_optional(r.kappa_hi)});
  }
  return out;
}

std::optional<double> rater_mean_validity(const RatingTable& table,
                                          const std::vector<std::string>& raters) {
  double sum = 0;
  int counted = 0;
  for (const auto& rater : raters) {
    std::size_t valid = 0, total = 0;
    for (const auto& r : table.rows()) {
      if (r.rater_id != rater) continue;
      ++total;
      valid += r.coarse_valid;
    }
    if (total == 0) continue;
    sum += static_cast<double>(valid) / static_cast<double>(total);
    ++counted;
  }
  if (counted == 0) return std::nullopt;
  return sum / counted;
}

namespace {

std::string group_label(Grouping grouping, Condition condition) {
  return grouping == Grouping::pooled ? std::string("all") : std::string(to_string(condition));
}

}  // namespace

ValidityCurve validity_by_position(const std::vector<CeJudgment>& judgments, Grouping grouping,
                                   const std::vector<int>& requested) {
  std::map<std::pair<std::string, int>, PositionValidity> cells;
  std::set<std::string> groups;
  for (const auto& j : judgments) {
    const auto g = group_label(grouping, j.condition);
    groups.insert(g);
    auto& cell = cells[{g, j.step_index}];
    cell.group = g;
    cell.position = j.step_index;
    ++cell.total;
    cell.valid += j.verdict.coarse_valid;
  }
  ValidityCurve out;
  if (groups.empty() && !requested.empty()) groups.insert("all");
  for (const auto& g : groups) {
    for (int p : requested) {
      if (!cells.contains({g, p})) {
        out.notes.push_back(fmt::format("position {} has no verdicts in group {}", p, g));
      }
    }
  }
  for (auto& [key, cell] : cells) {
    if (!requested.empty() &&
        std::find(requested.begin(), requested.end(), key.second) == requested.end()) {
      continue;
    }
    out.points.push_back(cell);
  }
  return out;
}

std::vector<ConceptValidity> validity_by_concept(const std::vector<CeJudgment>& judgments) {
  std::map<std::string, std::map<std::string, ChainValidity>> by_concept;
  for (const auto& j : judgments) {
    auto& c = by_concept[j.concept_id][j.chain_id];
    c.chain_id = j.chain_id;
    ++c.total;
    c.valid += j.verdict.coarse_valid;
  }
  std::vector<ConceptValidity> out;
  for (auto& [concept_id, chains] : by_concept) {
    ConceptValidity cv;
    cv.concept_id = concept_id;
    double sum = 0;
    for (auto& [id, c] : chains) {
      sum += c.rate();
      cv.chains.push_back(c);
    }
    cv.mean = sum / static_cast<double>(cv.chains.size());
    out.push_back(std::move(cv));
  }
  std::stable_sort(out.begin(), out.end(), [](const ConceptValidity& a, const ConceptValidity& b) {
    return a.mean > b.mean;
  });
  return out;
}

std::vector<SeriesPoint> length_series(const std::vector<Chain>& chains, Grouping grouping) {
  std::map<std::pair<std::string, int>, std::pair<std::size_t, double>> acc;
  for (const auto& c : chains) {
    const auto g = group_label(grouping, c.condition);
    for (std::size_t i = 0; i < c.analyses.size(); ++i) {
      auto& [n, sum] = acc[{g, static_cast<int>(i)}];
      ++n;
      sum += static_cast<double>(word_count(c.analyses[i]));
    }
  }
  std::vector<SeriesPoint> out;
  for (const auto& [key, v] : acc) {
    out.push_back({key.first, key.second, v.first, v.second / static_cast<double>(v.first)});
  }
  return out;
}

std::vector<ScorePoint> score_series(const std::vector<AnalysisJudgment>& judgments,
                                     Grouping grouping) {
  struct Acc {
    std::size_t n = 0;
    double accuracy = 0;
    double conciseness = 0;
  };
  std::map<std::pair<std::string, int>, Acc> acc;
  for (const auto& j : judgments) {
    auto& a = acc[{group_label(grouping, j.condition), j.score.position}];
    ++a.n;
    a.accuracy += j.score.accuracy;
    a.conciseness += j.score.conciseness;
  }
  std::vector<ScorePoint> out;
  for (const auto& [key, a] : acc) {
    const auto n = static_cast<double>(a.n);
    out.push_back({key.first, key.second, a.n, a.accuracy / n, a.conciseness / n});
  }
  return out;
}

}  // namespace cxgame
