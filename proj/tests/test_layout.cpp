#include <doctest.h>

#include <random>

#include "bachkit/json_io.hpp"
#include "bachkit/layout.hpp"
#include "oracles.hpp"

using namespace bachkit;

namespace {

Taxonomy small_taxonomy() {
  return Taxonomy("small", {{10, "car"}, {11, "person"}, {12, "bus"}}, {{1, "road"}, {2, "sky"}});
}

BoundingBox random_box(std::mt19937_64& rng, const Taxonomy& tax, Canvas c) {
  std::uniform_int_distribution<int> cat(0, static_cast<int>(tax.foreground_count()) - 1);
  BoundingBox b;
  b.h = std::uniform_int_distribution<int>(1, c.height)(rng);
  b.w = std::uniform_int_distribution<int>(1, c.width)(rng);
  b.y = std::uniform_int_distribution<int>(-b.h + 1, c.height - 1)(rng);
  b.x = std::uniform_int_distribution<int>(-b.w + 1, c.width - 1)(rng);
  b.category = tax.foreground()[static_cast<std::size_t>(cat(rng))].id;
  return b;
}

}  // namespace

TEST_CASE("taxonomy lookups and presets") {
  const Taxonomy city = Taxonomy::cityscapes();
  CHECK(city.foreground_count() == 10);
  CHECK(city.background_count() == 23);
  CHECK(city.id_for_name("car") == 26);
  CHECK(city.foreground_channel(24) == 0u);
  CHECK(city.is_background(7));
  CHECK_FALSE(city.contains(0));
  const Taxonomy ade = Taxonomy::ade20k();
  CHECK(ade.total_count() == 150);
  CHECK(Taxonomy::from_json_text(city.to_json_text()) == city);
  CHECK_THROWS_AS(Taxonomy("dup", {{1, "a"}}, {{1, "b"}}), Error);
  CHECK_THROWS_AS(Taxonomy("dup", {{1, "a"}}, {{2, "a"}}), Error);
  CHECK_THROWS_AS(Taxonomy("range", {{300, "a"}}, {{2, "b"}}), Error);
}

TEST_CASE("rasterized counts equal containment counts") {
  const Taxonomy tax = small_taxonomy();
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    SalientLayout l{Canvas{17, 23}, {}};
    const int n = std::uniform_int_distribution<int>(1, 6)(rng);
    for (int i = 0; i < n; ++i) l.boxes.push_back(random_box(rng, tax, l.canvas));
    const LabelMap m = rasterize_layout(l, tax);
    const auto want = oracle::containment(l, tax);
    REQUIRE(m.counts().size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(m.counts()[i] == want[i]);
  }
}

TEST_CASE("rasterize rejects invalid layouts with the right kind") {
  const Taxonomy tax = small_taxonomy();
  SalientLayout empty{Canvas{8, 8}, {}};
  CHECK_THROWS_AS(rasterize_layout(empty, tax), Error);
  SalientLayout unknown{Canvas{8, 8}, {{0, 0, 2, 2, 99}}};
  try {
    rasterize_layout(unknown, tax);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Taxonomy);
  }
  SalientLayout background_box{Canvas{8, 8}, {{0, 0, 2, 2, 1}}};
  CHECK_THROWS_AS(rasterize_layout(background_box, tax), Error);
  SalientLayout outside{Canvas{8, 8}, {{9, 0, 2, 2, 10}}};
  try {
    rasterize_layout(outside, tax);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Validation);
  }
  const auto v = validate_layout(SalientLayout{Canvas{8, 8}, {{0, 0, 0, 3, 10}, {20, 20, 2, 2, 11}}}, tax);
  REQUIRE(v.size() == 2);
  CHECK(v[0].kind == Violation::Kind::NonPositiveExtent);
  CHECK(v[0].box_index == 0u);
  CHECK(v[1].kind == Violation::Kind::OutOfCanvas);
  CHECK(v[1].box_index == 1u);
}

TEST_CASE("overlapping boxes count twice") {
  const Taxonomy tax = small_taxonomy();
  SalientLayout l{Canvas{6, 6}, {{0, 0, 3, 3, 10}, {1, 1, 3, 3, 10}}};
  const LabelMap m = rasterize_layout(l, tax);
  int twos = 0;
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 6; ++x) twos += m.at(y, x, 0) == 2;
  CHECK(twos == 4);
}

TEST_CASE("run-length bitmaps round trip and intersect like dense masks") {
  std::mt19937_64 rng(22);
  std::bernoulli_distribution bit(0.35);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t H = 7, W = 9;
    std::vector<std::uint8_t> a(H * W), b(H * W);
    for (auto& v : a) v = bit(rng);
    for (auto& v : b) v = bit(rng);
    const auto ra = CategoryBitmap::from_mask(1, H, W, a);
    const auto rb = CategoryBitmap::from_mask(1, H, W, b);
    CHECK(ra.decode() == a);
    std::uint64_t inter = 0, uni = 0, card = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      inter += a[i] && b[i];
      uni += a[i] || b[i];
      card += a[i];
    }
    CHECK(ra.cardinality() == card);
    CHECK(intersection_count(ra, rb) == inter);
    CHECK(union_count(ra, rb) == uni);
  }
}

TEST_CASE("from_runs normalizes unsorted and touching runs") {
  const auto b = CategoryBitmap::from_runs(3, 4, 4, {{8, 2}, {0, 3}, {3, 2}, {9, 4}});
  REQUIRE(b.runs().size() == 2);
  CHECK(b.runs()[0] == CategoryBitmap::Run{0, 5});
  CHECK(b.runs()[1] == CategoryBitmap::Run{8, 5});
  CHECK(b.cardinality() == 10);
  CHECK_THROWS_AS(CategoryBitmap::from_runs(3, 2, 2, {{3, 2}}), Error);
}

TEST_CASE("extract_bbox recovers clipped single boxes") {
  const Taxonomy tax = small_taxonomy();
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    SalientLayout l{Canvas{13, 19}, {random_box(rng, tax, Canvas{13, 19})}};
    const auto clipped = clip_to_canvas(l.boxes[0], l.canvas);
    REQUIRE(clipped);
    const BoundingBox got = extract_bbox(category_union(rasterize_layout(l, tax), tax, l.boxes[0].category));
    CHECK(got == *clipped);
  }
  CHECK_THROWS_AS(extract_bbox(CategoryBitmap(10, 4, 4)), Error);
}

TEST_CASE("boxes_from_segmap finds components above the area threshold") {
  const Taxonomy tax = small_taxonomy();
  ClassMap seg{10, 12, std::vector<std::uint8_t>(120, 1)};
  auto fill = [&](int y0, int x0, int h, int w, int id) {
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x) seg.ids[static_cast<std::size_t>(y * 12 + x)] = static_cast<std::uint8_t>(id);
  };
  fill(1, 1, 4, 5, 10);
  fill(6, 7, 3, 4, 10);
  fill(0, 9, 2, 2, 11);  // 4 pixels, below threshold
  const SalientLayout l = boxes_from_segmap(seg, tax, 5);
  REQUIRE(l.boxes.size() == 2);
  CHECK(l.boxes[0] == BoundingBox{1, 1, 4, 5, 10});
  CHECK(l.boxes[1] == BoundingBox{7, 6, 3, 4, 10});
  CHECK(boxes_from_segmap(seg, tax, 1).boxes.size() == 3);
  CHECK(boxes_from_segmap(to_label_map(seg, tax), tax, 5) == l);
}

TEST_CASE("class map and label map conversions are inverse") {
  const Taxonomy tax = small_taxonomy();
  std::mt19937_64 rng(24);
  const ClassMap seg = oracle::random_segmap(tax, 6, 7, rng);
  const LabelMap one_hot = to_label_map(seg, tax);
  CHECK(one_hot.channels() == 5);
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 7; ++x) CHECK(one_hot.pixel_sum(y, x) == 1);
  CHECK(to_class_map(one_hot, tax) == seg);
  ClassMap bad = seg;
  bad.ids[0] = 77;
  CHECK_THROWS_AS(to_label_map(bad, tax), Error);
}

TEST_CASE("layout JSON round trip") {
  const Taxonomy tax = Taxonomy::cityscapes();
  const SalientLayout l{Canvas{256, 512}, {{10, 20, 30, 40, 26}, {-5, 100, 60, 20, 24}}};
  const std::string text = layout_to_json_text(l, tax);
  CHECK(layout_from_json_text(text, tax) == l);
  CHECK(text.find("\"car\"") != std::string::npos);
  CHECK_THROWS_AS(layout_from_json_text("{\"canvas\": [4, 4], \"boxes\": [{\"category\": \"dragon\", \"x\": 0, \"y\": 0, \"h\": 1, \"w\": 1}]}", tax), Error);
  CHECK_THROWS_AS(layout_from_json_text("{\"canvas\": [4, 4]}", tax), Error);
  CHECK_THROWS_AS(layout_from_json_text("not json", tax), Error);
  const auto by_id = layout_from_json_text("{\"canvas\": [4, 4], \"boxes\": [{\"category\": 26, \"x\": 0, \"y\": 0, \"h\": 1, \"w\": 1}]}", tax);
  CHECK(by_id.boxes[0].category == 26);
}
