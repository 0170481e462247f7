#include <doctest.h>

#include <random>

#include "bachkit/retrieval.hpp"
#include "bachkit/synthetic.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace bachkit;

namespace {

SalientLayout random_query(const Taxonomy& tax, Canvas c, std::mt19937_64& rng) {
  SalientLayout l{c, {}};
  const int n = std::uniform_int_distribution<int>(1, 5)(rng);
  for (int i = 0; i < n; ++i) {
    BoundingBox b;
    b.h = std::uniform_int_distribution<int>(1, c.height)(rng);
    b.w = std::uniform_int_distribution<int>(1, c.width)(rng);
    b.y = std::uniform_int_distribution<int>(-b.h + 1, c.height - 1)(rng);
    b.x = std::uniform_int_distribution<int>(-b.w + 1, c.width - 1)(rng);
    b.category = tax.foreground()[rng() % tax.foreground_count()].id;
    l.boxes.push_back(b);
  }
  return l;
}

std::vector<std::size_t> indices(const RetrievalResult& r) {
  std::vector<std::size_t> out;
  for (const auto& e : r.ranked) out.push_back(e.index);
  return out;
}

}  // namespace

TEST_CASE("iou_r equals the dense counting oracle") {
  const Taxonomy tax = fixture::five_categories();
  std::mt19937_64 rng(41);
  const Canvas c{48, 64};
  for (int trial = 0; trial < 60; ++trial) {
    const ClassMap seg = trial % 2 ? oracle::random_segmap(tax, 48, 64, rng) : synthetic_segmap(tax, c, rng);
    const BankEntry e = BankEntry::from_segmap("x", seg, tax);
    const SalientLayout q = random_query(tax, c, rng);
    const Score s = iou_r(q, e, tax);
    const oracle::Ratio want = oracle::iou_r(q, seg, tax);
    CHECK(s == Score(want.num, want.den));
    if (want.den != 0) {
      CHECK(s.numerator() == want.num);
      CHECK(s.denominator() == want.den);
    }
    const PreparedQuery pq = prepare_query(q, tax);
    CHECK(score_bound(pq.counts, e.foreground_counts()) >= s);
  }
}

TEST_CASE("iou_r edge cases") {
  const Taxonomy tax = fixture::five_categories();
  const BankEntry empty_fg = BankEntry::from_segmap("bg", ClassMap{2, 2, {1, 2, 3, 1}}, tax);
  const SalientLayout q{Canvas{2, 2}, {{0, 0, 2, 2, 20}}};
  CHECK(iou_r(q, empty_fg, tax) == Score(0, 4));
  const BankEntry full = BankEntry::from_segmap("car", ClassMap{2, 2, {20, 20, 20, 20}}, tax);
  CHECK(iou_r(q, full, tax).decimal() == "1.000000");
  CHECK_THROWS_AS(iou_r(SalientLayout{Canvas{3, 2}, {{0, 0, 1, 1, 20}}}, full, tax), Error);
  CHECK_THROWS_AS(score_bound(std::vector<std::uint32_t>{1, 2}, std::vector<std::uint32_t>{1}), Error);
}

TEST_CASE("score formatting and ordering") {
  CHECK(Score(1, 3).decimal() == "0.333333");
  CHECK(Score(2, 3).decimal() == "0.666667");
  CHECK(Score(1, 8).decimal() == "0.125000");
  CHECK(Score(1, 2000000).decimal() == "0.000001");  // half rounds up
  CHECK(Score(6, 8).fraction() == "3/4");
  CHECK(Score(0, 0).fraction() == "0/1");
  CHECK(Score(1, 3) < Score(1, 2));
  CHECK(Score(2, 4) == Score(1, 2));
  const std::uint64_t big = (1ULL << 62) + 1;
  CHECK(Score(big - 1, big) < Score(big, big + 1));
}

TEST_CASE("top-m equals the full-sort oracle for every worker count, with and without pruning") {
  const Taxonomy tax = fixture::five_categories();
  const Canvas c{24, 32};
  std::mt19937_64 rng(42);
  for (int b = 0; b < 8; ++b) {
    const MemoryBank bank = fixture::tied_bank(tax, c, 100, 100 + b);
    const SalientLayout q = random_layout(tax, c, rng, 4);
    for (std::size_t m : {1, 3, 4, 5}) {
      const auto want = oracle::top_m(q, bank, m);
      const RetrievalResult base = retrieve_top_m(bank, q, m, 1, {false});
      CHECK(indices(base) == want);
      CHECK(base.scored == bank.size());
      for (std::size_t w : {1, 2, 8}) {
        for (bool prune : {false, true}) {
          const RetrievalResult r = retrieve_top_m(bank, q, m, w, {prune});
          CHECK(r.ranked == base.ranked);
          CHECK(to_json(r, false).dump() == to_json(base, false).dump());
          CHECK(r.scored + r.pruned == bank.size());
        }
      }
    }
  }
}

TEST_CASE("retrieval parameter and state errors") {
  const Taxonomy tax = fixture::five_categories();
  const Canvas c{8, 8};
  const MemoryBank bank = fixture::tied_bank(tax, c, 3, 1);
  const SalientLayout q{c, {{0, 4, 4, 4, 20}}};
  auto kind = [&](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;
  };
  CHECK(kind([&] { retrieve_top_m(MemoryBank(tax, c, {}, 0), q, 3, 1); }) == ErrorKind::Retrieval);
  CHECK(kind([&] { retrieve_top_m(bank, q, 0, 1); }) == ErrorKind::Parameter);
  CHECK(kind([&] { retrieve_top_m(bank, q, 3, 0); }) == ErrorKind::Parameter);
  CHECK(kind([&] { retrieve_top_m(bank, SalientLayout{Canvas{8, 9}, q.boxes}, 3, 1); }) == ErrorKind::Comparison);
  CHECK(retrieve_top_m(bank, q, 10, 4).ranked.size() == 3);
}

TEST_CASE("query fingerprint is stable and content sensitive") {
  const Taxonomy tax = fixture::five_categories();
  const SalientLayout a{Canvas{8, 8}, {{0, 0, 2, 2, 20}, {3, 3, 2, 2, 21}}};
  const SalientLayout b{Canvas{8, 8}, {{3, 3, 2, 2, 21}, {0, 0, 2, 2, 20}}};
  const SalientLayout c{Canvas{8, 8}, {{3, 3, 2, 2, 22}, {0, 0, 2, 2, 20}}};
  CHECK(prepare_query(a, tax).fingerprint == prepare_query(a, tax).fingerprint);
  CHECK(retrieve_top_m(fixture::tied_bank(tax, Canvas{8, 8}, 5, 2), a, 3, 1).ranked ==
        retrieve_top_m(fixture::tied_bank(tax, Canvas{8, 8}, 5, 2), b, 3, 1).ranked);
  CHECK(prepare_query(a, tax).fingerprint != prepare_query(c, tax).fingerprint);
}

TEST_CASE("benchmark report is consistent") {
  const Taxonomy tax = fixture::five_categories();
  const Canvas c{32, 64};
  const MemoryBank bank = synthetic_bank(tax, c, 40, 3);
  std::mt19937_64 rng(43);
  std::vector<SalientLayout> qs{random_layout(tax, c, rng), random_layout(tax, c, rng)};
  const BenchReport r = bench_retrieval(bank, qs, 2);
  CHECK(r.entries == 40);
  CHECK(r.queries == 2);
  CHECK(r.query_seconds_1.size() == 2);
  CHECK(r.per_entry.p50_ms <= r.per_entry.p95_ms);
  CHECK(r.per_entry.p95_ms <= r.per_entry.max_ms);
  CHECK(r.speedup > 0);
  CHECK(r.pruning_hit_rate >= 0);
  CHECK(r.pruning_hit_rate <= 1);
  CHECK(to_json(r).contains("speedup"));
}
