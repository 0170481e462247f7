#include "bachkit/retrieval.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

#include "bachkit/parallel.hpp"

namespace bachkit {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Ranking order: higher score first, then earlier ingest index.
bool ranks_before(const RankedEntry& a, const RankedEntry& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.index < b.index;
}

}  // namespace

std::string Score::fraction() const {
  const std::uint64_t g = std::gcd(num_, den_);
  return std::to_string(num_ / g) + "/" + std::to_string(den_ / g);
}

std::string Score::decimal(int places) const {
  unsigned __int128 scale = 1;
  for (int i = 0; i < places; ++i) scale *= 10;
  const unsigned __int128 scaled = (static_cast<unsigned __int128>(num_) * scale * 2 + den_) / (2 * den_);
  const auto whole = static_cast<std::uint64_t>(scaled / scale);
  auto frac = static_cast<std::uint64_t>(scaled % scale);
  std::string digits(static_cast<std::size_t>(places), '0');
  for (int i = places - 1; i >= 0; --i) {
    digits[static_cast<std::size_t>(i)] = static_cast<char>('0' + frac % 10);
    frac /= 10;
  }
  return std::to_string(whole) + (places > 0 ? "." + digits : "");
}

PreparedQuery prepare_query(const SalientLayout& layout, const Taxonomy& taxonomy) {
  require_valid_layout(layout, taxonomy);
  PreparedQuery q;
  q.canvas = layout.canvas;
  q.unions.reserve(taxonomy.foreground_count());
  for (const Category& c : taxonomy.foreground()) {
    q.unions.push_back(category_union(layout, taxonomy, c.id));
    q.counts.push_back(static_cast<std::uint32_t>(q.unions.back().cardinality()));
  }
  std::vector<std::uint8_t> bytes;
  auto put = [&](std::int64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put(layout.canvas.height);
  put(layout.canvas.width);
  for (const BoundingBox& b : layout.boxes) {
    put(b.category);
    put(b.x);
    put(b.y);
    put(b.h);
    put(b.w);
  }
  q.fingerprint = fnv1a64(bytes);
  return q;
}

Score iou_r(const PreparedQuery& query, const BankEntry& entry) {
  if (static_cast<std::size_t>(query.canvas.height) != entry.height() ||
      static_cast<std::size_t>(query.canvas.width) != entry.width()) {
    fail(ErrorKind::Comparison, "iou_r: query canvas differs from entry '" + entry.id() + "'");
  }
  const auto counts = entry.foreground_counts();
  if (counts.size() != query.counts.size()) {
    fail(ErrorKind::Comparison, "iou_r: taxonomy mismatch with entry '" + entry.id() + "'");
  }
  std::uint64_t inter = 0, uni = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const std::uint64_t s = counts[c], l = query.counts[c];
    if (s == 0 && l == 0) continue;
    std::uint64_t i = 0;
    if (s != 0 && l != 0) i = intersection_count(*entry.foreground_bitmap(c), query.unions[c]);
    inter += i;
    uni += s + l - i;
  }
  return Score(inter, uni);
}

Score iou_r(const SalientLayout& query, const BankEntry& entry, const Taxonomy& taxonomy) {
  return iou_r(prepare_query(query, taxonomy), entry);
}

Score score_bound(std::span<const std::uint32_t> query_counts,
                  std::span<const std::uint32_t> entry_counts) {
  if (query_counts.size() != entry_counts.size()) {
    fail(ErrorKind::Comparison, "score_bound: category count mismatch");
  }
  std::uint64_t lo = 0, hi = 0;
  for (std::size_t c = 0; c < query_counts.size(); ++c) {
    lo += std::min(query_counts[c], entry_counts[c]);
    hi += std::max(query_counts[c], entry_counts[c]);
  }
  return Score(lo, hi);
}

RetrievalResult retrieve_top_m(const MemoryBank& bank, const SalientLayout& query, std::size_t m,
                               std::size_t workers, RetrievalOptions options) {
  const auto t0 = Clock::now();
  PreparedQuery q = prepare_query(query, bank.taxonomy());
  const double prep = seconds_since(t0);
  RetrievalResult r = retrieve_top_m(bank, q, m, workers, options);
  r.timing.prepare_seconds = prep;
  return r;
}

RetrievalResult retrieve_top_m(const MemoryBank& bank, const PreparedQuery& query, std::size_t m,
                               std::size_t workers, RetrievalOptions options) {
  if (bank.empty()) fail(ErrorKind::Retrieval, "retrieve_top_m: memory bank is empty");
  if (m == 0) fail(ErrorKind::Parameter, "retrieve_top_m: m must be >= 1");
  if (workers == 0) fail(ErrorKind::Parameter, "retrieve_top_m: workers must be >= 1");
  if (query.canvas != bank.canvas()) {
    fail(ErrorKind::Comparison, "retrieve_top_m: query canvas differs from bank canvas");
  }

  const auto entries = bank.entries();
  const std::size_t n = entries.size();
  workers = std::min(workers, n);
  struct Local {
    std::vector<RankedEntry> best;  // sorted by ranks_before, size <= m
    std::size_t scored = 0;
    std::size_t pruned = 0;
  };
  std::vector<Local> locals(workers);

  const auto t_scan = Clock::now();
  for_each_chunk(n, workers, [&](std::size_t w, Chunk chunk) {
    Local& local = locals[w];
    local.best.reserve(m + 1);
    for (std::size_t i = chunk.begin; i < chunk.end; ++i) {
      const BankEntry& e = entries[i];
      // Everything already held has a smaller index, so an entry whose bound
      // does not beat the current m-th score cannot enter the list.
      if (options.prune && local.best.size() == m &&
          score_bound(query.counts, e.foreground_counts()) <= local.best.back().score) {
        ++local.pruned;
        continue;
      }
      ++local.scored;
      RankedEntry cand{i, {}, iou_r(query, e)};
      if (local.best.size() == m && !ranks_before(cand, local.best.back())) continue;
      auto pos = std::upper_bound(local.best.begin(), local.best.end(), cand, ranks_before);
      local.best.insert(pos, std::move(cand));
      if (local.best.size() > m) local.best.pop_back();
    }
  });

  RetrievalResult result;
  result.timing.scan_seconds = seconds_since(t_scan);
  const auto t_merge = Clock::now();
  for (Local& l : locals) {
    result.scored += l.scored;
    result.pruned += l.pruned;
    result.ranked.insert(result.ranked.end(), l.best.begin(), l.best.end());
  }
  std::sort(result.ranked.begin(), result.ranked.end(), ranks_before);
  if (result.ranked.size() > m) result.ranked.resize(m);
  for (RankedEntry& r : result.ranked) r.id = entries[r.index].id();
  result.query_fingerprint = query.fingerprint;
  result.timing.merge_seconds = seconds_since(t_merge);
  return result;
}

nlohmann::json to_json(const RetrievalResult& result, bool include_timing) {
  nlohmann::json ranked = nlohmann::json::array();
  for (const RankedEntry& r : result.ranked) {
    ranked.push_back({{"id", r.id},
                      {"index", r.index},
                      {"score", r.score.fraction()},
                      {"score_decimal", r.score.decimal()}});
  }
  char fp[17];
  std::snprintf(fp, sizeof fp, "%016llx", static_cast<unsigned long long>(result.query_fingerprint));
  nlohmann::json j = {{"query_fingerprint", fp}, {"results", ranked}};
  if (include_timing) {
    j["timing"] = {{"prepare_ms", result.timing.prepare_seconds * 1e3},
                   {"scan_ms", result.timing.scan_seconds * 1e3},
                   {"merge_ms", result.timing.merge_seconds * 1e3},
                   {"scored", result.scored},
                   {"pruned", result.pruned}};
  }
  return j;
}

BenchReport bench_retrieval(const MemoryBank& bank, std::span<const SalientLayout> queries,
                            std::size_t workers, BenchOptions options) {
  if (bank.empty()) fail(ErrorKind::Retrieval, "bench_retrieval: memory bank is empty");
  if (queries.empty()) fail(ErrorKind::Parameter, "bench_retrieval: no queries");
  if (workers == 0) fail(ErrorKind::Parameter, "bench_retrieval: workers must be >= 1");
  BenchReport rep;
  rep.entries = bank.size();
  rep.queries = queries.size();
  rep.workers = workers;
  rep.hardware_threads = std::thread::hardware_concurrency();

  std::vector<PreparedQuery> prepared;
  for (const SalientLayout& q : queries) prepared.push_back(prepare_query(q, bank.taxonomy()));

  // Per-entry latency: each iou_r timed on its own, one worker.
  std::vector<double> samples;
  samples.reserve(bank.size() * prepared.size());
  std::uint64_t sink = 0;
  for (const PreparedQuery& q : prepared) {
    for (const BankEntry& e : bank.entries()) {
      const auto t0 = Clock::now();
      const Score s = iou_r(q, e);
      samples.push_back(seconds_since(t0));
      sink += s.numerator();
    }
  }
  [[maybe_unused]] static volatile std::uint64_t observed;
  observed = sink;
  std::sort(samples.begin(), samples.end());
  auto pct = [&](double p) {
    const auto idx = static_cast<std::size_t>(p * static_cast<double>(samples.size() - 1));
    return samples[idx] * 1e3;
  };
  rep.per_entry.mean_ms =
      std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size()) * 1e3;
  rep.per_entry.p50_ms = pct(0.50);
  rep.per_entry.p95_ms = pct(0.95);
  rep.per_entry.max_ms = samples.back() * 1e3;

  // Full exhaustive scans (no pruning), single worker vs `workers`.
  const RetrievalOptions exhaustive{false};
  for (const PreparedQuery& q : prepared) {
    double best1 = 1e300, bestn = 1e300;
    for (std::size_t rpt = 0; rpt < std::max<std::size_t>(1, options.repeats); ++rpt) {
      auto t0 = Clock::now();
      (void)retrieve_top_m(bank, q, options.m, 1, exhaustive);
      best1 = std::min(best1, seconds_since(t0));
      t0 = Clock::now();
      (void)retrieve_top_m(bank, q, options.m, workers, exhaustive);
      bestn = std::min(bestn, seconds_since(t0));
    }
    rep.query_seconds_1.push_back(best1);
    rep.query_seconds_n.push_back(bestn);
  }
  rep.total_seconds_1 = std::accumulate(rep.query_seconds_1.begin(), rep.query_seconds_1.end(), 0.0);
  rep.total_seconds_n = std::accumulate(rep.query_seconds_n.begin(), rep.query_seconds_n.end(), 0.0);
  rep.speedup = rep.total_seconds_n > 0 ? rep.total_seconds_1 / rep.total_seconds_n : 0.0;
  rep.mean_scan_seconds_1 = rep.total_seconds_1 / static_cast<double>(prepared.size());

  std::size_t pruned = 0;
  for (const PreparedQuery& q : prepared) pruned += retrieve_top_m(bank, q, options.m, 1).pruned;
  rep.pruning_hit_rate =
      static_cast<double>(pruned) / static_cast<double>(bank.size() * prepared.size());
  return rep;
}

nlohmann::json to_json(const BenchReport& r) {
  return {{"entries", r.entries},
          {"queries", r.queries},
          {"workers", r.workers},
          {"hardware_threads", r.hardware_threads},
          {"per_entry_ms",
           {{"mean", r.per_entry.mean_ms}, {"p50", r.per_entry.p50_ms},
            {"p95", r.per_entry.p95_ms}, {"max", r.per_entry.max_ms}}},
          {"query_seconds_1_worker", r.query_seconds_1},
          {"query_seconds_n_workers", r.query_seconds_n},
          {"total_seconds_1_worker", r.total_seconds_1},
          {"total_seconds_n_workers", r.total_seconds_n},
          {"mean_scan_seconds_1_worker", r.mean_scan_seconds_1},
          {"speedup", r.speedup},
          {"pruning_hit_rate", r.pruning_hit_rate}};
}

}  // namespace bachkit
