#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "bachkit/bank.hpp"
#include "bachkit/layout.hpp"

namespace bachkit {

/// Exact layout-similarity score: pooled intersection over pooled union.
/// A zero denominator is stored as 0/1.
class Score {
 public:
  constexpr Score() = default;
  constexpr Score(std::uint64_t intersection, std::uint64_t union_)
      : num_(union_ == 0 ? 0 : intersection), den_(union_ == 0 ? 1 : union_) {}

  constexpr std::uint64_t numerator() const noexcept { return num_; }
  constexpr std::uint64_t denominator() const noexcept { return den_; }
  double value() const noexcept { return static_cast<double>(num_) / static_cast<double>(den_); }

  /// Reduced "p/q".
  std::string fraction() const;
  /// Fixed six-place decimal of the exact fraction, rounded half up.
  std::string decimal(int places = 6) const;

  friend constexpr std::strong_ordering operator<=>(const Score& a, const Score& b) noexcept {
    const auto l = static_cast<unsigned __int128>(a.num_) * b.den_;
    const auto r = static_cast<unsigned __int128>(b.num_) * a.den_;
    return l <=> r;
  }
  friend constexpr bool operator==(const Score& a, const Score& b) noexcept {
    return (a <=> b) == std::strong_ordering::equal;
  }

 private:
  std::uint64_t num_ = 0;
  std::uint64_t den_ = 1;
};

/// Query layout reduced to per-foreground-channel pixel unions.
struct PreparedQuery {
  Canvas canvas;
  std::vector<CategoryBitmap> unions;  // indexed by foreground channel
  std::vector<std::uint32_t> counts;   // |L^j| per foreground channel
  std::uint64_t fingerprint = 0;
};

PreparedQuery prepare_query(const SalientLayout& layout, const Taxonomy& taxonomy);

/// Σ_j |S^j ∩ L^j| / Σ_j |S^j ∪ L^j| over foreground categories.
Score iou_r(const PreparedQuery& query, const BankEntry& entry);
Score iou_r(const SalientLayout& query, const BankEntry& entry, const Taxonomy& taxonomy);

/// Σ_j min(|S^j|, |L^j|) / Σ_j max(|S^j|, |L^j|); never below iou_r.
Score score_bound(std::span<const std::uint32_t> query_counts,
                  std::span<const std::uint32_t> entry_counts);

inline constexpr std::size_t kDefaultTopM = 3;

struct RetrievalOptions {
  bool prune = true;
};

struct RankedEntry {
  std::size_t index = 0;  // ingest order
  std::string id;
  Score score;
  friend bool operator==(const RankedEntry&, const RankedEntry&) = default;
};

struct RetrievalTiming {
  double prepare_seconds = 0.0;
  double scan_seconds = 0.0;
  double merge_seconds = 0.0;
};

struct RetrievalResult {
  std::vector<RankedEntry> ranked;
  std::uint64_t query_fingerprint = 0;
  std::size_t scored = 0;  // exact iou_r evaluations
  std::size_t pruned = 0;  // entries skipped by score_bound
  RetrievalTiming timing;
};

/// Exact top-m by iou_r, ties broken by ingest order. Entries are split into
/// contiguous chunks, one per worker, and merged deterministically, so the
/// ranking does not depend on the worker count.
RetrievalResult retrieve_top_m(const MemoryBank& bank, const SalientLayout& query, std::size_t m,
                               std::size_t workers, RetrievalOptions options = {});
RetrievalResult retrieve_top_m(const MemoryBank& bank, const PreparedQuery& query, std::size_t m,
                               std::size_t workers, RetrievalOptions options = {});

/// Ranking in report form (ids, exact fractions, optional timing block).
nlohmann::json to_json(const RetrievalResult& result, bool include_timing = true);

struct LatencySummary {
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double max_ms = 0.0;
};

struct BenchReport {
  std::size_t entries = 0;
  std::size_t queries = 0;
  std::size_t workers = 1;
  LatencySummary per_entry;             // single-worker, one iou_r per sample
  std::vector<double> query_seconds_1;  // full scan per query, 1 worker
  std::vector<double> query_seconds_n;  // full scan per query, `workers`
  double total_seconds_1 = 0.0;         // sum of query_seconds_1
  double total_seconds_n = 0.0;
  double speedup = 0.0;                 // total_seconds_1 / total_seconds_n
  double mean_scan_seconds_1 = 0.0;     // per query
  double pruning_hit_rate = 0.0;        // pruned / bank size, with pruning on
  std::size_t hardware_threads = 0;
};

struct BenchOptions {
  std::size_t m = kDefaultTopM;
  std::size_t repeats = 1;
};

BenchReport bench_retrieval(const MemoryBank& bank, std::span<const SalientLayout> queries,
                            std::size_t workers, BenchOptions options = {});
nlohmann::json to_json(const BenchReport& report);

}  // namespace bachkit
