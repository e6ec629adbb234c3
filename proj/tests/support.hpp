#pragma once

// Shared fixtures and reference implementations for the test binaries.
// The oracles deliberately use different formulations from the library.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include <fmt/format.h>

#include "cxgame/config.hpp"
#include "cxgame/core.hpp"
#include "cxgame/engine.hpp"
#include "cxgame/io.hpp"

namespace cxtest {

namespace fs = std::filesystem;
using cxgame::json;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            fmt::format("cxgame-test-{}-{}-{}", ::getpid(), counter++, rd());
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const fs::path& p) const { return path_ / p; }

 private:
  fs::path path_;
};

inline fs::path source_dir() { return fs::path(CXGAME_SOURCE_DIR); }

inline std::string fixed_clock() { return "2026-01-01T00:00:00.000Z"; }

// Seeds of exactly `words` words.
inline std::string seed_text(const std::string& surface, int words) {
  std::string out = "A " + surface;
  int n = 1 + static_cast<int>(std::count(surface.begin(), surface.end(), ' ')) + 1;
  static const char* filler[] = {"is", "something", "people", "usually", "recognize", "when",
                                 "they", "see", "it", "in", "ordinary", "life", "around",
                                 "them", "today"};
  for (int k = 0; n < words; ++n, ++k) out += std::string(" ") + filler[k % 15];
  return out + ".";
}

inline std::vector<cxgame::Concept> concepts(int n, int seed_words = 11) {
  static const char* names[] = {"game",   "friend", "neighbor", "weed",  "mistake",
                                "expert", "sandwich", "art",    "tool",  "home",
                                "lamp",   "river",  "garden",   "novel", "bridge"};
  std::vector<cxgame::Concept> out;
  for (int i = 0; i < n; ++i) {
    cxgame::Concept c;
    c.id = names[i % 15] + (i >= 15 ? std::to_string(i / 15) : std::string());
    c.surface_form = c.id;
    c.part_of_speech = cxgame::PartOfSpeech::noun;
    c.seed_analysis = seed_text(c.surface_form, seed_words);
    out.push_back(c);
  }
  return out;
}

// Offline config driven by the synthetic responder.
inline cxgame::RunConfig mock_config(int n_concepts, int chains_per_condition, int iterations,
                                     std::uint64_t seed = 7) {
  cxgame::RunConfig c;
  c.run_id = "test";
  c.concepts = concepts(n_concepts);
  c.chains_per_condition = chains_per_condition;
  c.iterations = iterations;
  c.schedule.mode = cxgame::ScheduleMode::self_play;
  c.schedule.model_ids = {"mock-a"};
  c.judge.model_id = "mock-judge";
  c.judge.ce_positions = cxgame::PositionSpec{"all", {}};
  c.judge.analysis_positions = cxgame::PositionSpec{"all", {}};
  c.tagging.model_id = "mock-tagger";
  c.rng_seed = seed;
  c.stats_seed = seed;
  c.parallelism = 4;
  c.retry.base_backoff_ms = 1;
  c.retry.max_backoff_ms = 2;
  c.mock.enabled = true;
  c.mock.script.seed = seed;
  return c;
}

// ---- oracles ----

// Cohen's kappa from the full confusion matrix.
template <typename T>
std::optional<double> kappa_oracle(const std::vector<T>& a, const std::vector<T>& b) {
  std::vector<T> labels(a.begin(), a.end());
  labels.insert(labels.end(), b.begin(), b.end());
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  const std::size_t k = labels.size();
  std::vector<std::vector<double>> m(k, std::vector<double>(k, 0.0));
  auto idx = [&](const T& v) {
    return static_cast<std::size_t>(std::lower_bound(labels.begin(), labels.end(), v) -
                                    labels.begin());
  };
  for (std::size_t i = 0; i < a.size(); ++i) m[idx(a[i])][idx(b[i])] += 1.0;
  const double n = static_cast<double>(a.size());
  double diag = 0, chance = 0;
  for (std::size_t r = 0; r < k; ++r) {
    diag += m[r][r];
    double row = 0, col = 0;
    for (std::size_t c = 0; c < k; ++c) {
      row += m[r][c];
      col += m[c][r];
    }
    chance += (row / n) * (col / n);
  }
  if (std::abs(1.0 - chance) < 1e-12) return std::nullopt;
  return (diag / n - chance) / (1.0 - chance);
}

template <typename T>
double agreement_oracle(const std::vector<T>& a, const std::vector<T>& b) {
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < a.size(); ++i) mismatches += !(a[i] == b[i]);
  return 1.0 - static_cast<double>(mismatches) / static_cast<double>(a.size());
}

// Raw-sum form of the correlation coefficient.
inline std::optional<double> pearson_oracle(const std::vector<double>& x,
                                            const std::vector<double>& y) {
  long double n = static_cast<long double>(x.size());
  long double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += static_cast<long double>(x[i]) * x[i];
    syy += static_cast<long double>(y[i]) * y[i];
    sxy += static_cast<long double>(x[i]) * y[i];
  }
  const long double vx = n * sxx - sx * sx;
  const long double vy = n * syy - sy * sy;
  if (vx <= 1e-18L || vy <= 1e-18L) return std::nullopt;
  return static_cast<double>((n * sxy - sx * sy) / std::sqrt(vx * vy));
}

// Changes counted as (number of maximal constant runs) - 1.
inline std::size_t oscillation_oracle(const std::vector<bool>& row) {
  if (row.empty()) return 0;
  std::size_t runs = 1;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] != row[i - 1]) ++runs;
  }
  return runs - 1;
}

// Drops the timestamp fields that legitimately differ between reruns.
inline json strip_timestamps(json j) {
  static const char* keys[] = {"ts", "ce_ts", "repair_ts", "created_at", "submitted_at"};
  if (j.is_object()) {
    for (const char* k : keys) j.erase(k);
    for (auto& [k, v] : j.items()) v = strip_timestamps(v);
  } else if (j.is_array()) {
    for (auto& v : j) v = strip_timestamps(v);
  }
  return j;
}

// Every regular file under root, relative path -> normalized contents.
inline std::map<std::string, std::string> normalized_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root).generic_string();
    const auto text = cxgame::read_text_file(e.path());
    const auto ext = e.path().extension();
    if (ext == ".json") {
      out[rel] = strip_timestamps(json::parse(text)).dump(1);
    } else if (ext == ".jsonl") {
      std::string lines;
      std::size_t start = 0;
      while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        const auto line = text.substr(start, end - start);
        if (!line.empty()) lines += strip_timestamps(json::parse(line)).dump() + "\n";
        start = end + 1;
      }
      out[rel] = lines;
    } else {
      out[rel] = text;
    }
  }
  return out;
}

}  // namespace cxtest
