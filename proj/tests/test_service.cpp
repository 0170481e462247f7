#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "bachkit/json_io.hpp"
#include "bachkit/retrieval.hpp"
#include "bachkit/service.hpp"
#include "bachkit/synthetic.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace bachkit;
using nlohmann::json;

namespace {

Taxonomy preview_taxonomy() { return Taxonomy("preview", {{10, "car"}, {11, "person"}}, {{1, "road"}, {2, "sky"}}); }

Palette fixture_palette() {
  Palette p;
  p.void_color = {0, 0, 0};
  p.accent = {255, 0, 255};
  p.alpha = 0.5;
  p.colors = {{1, {100, 100, 100}}, {2, {0, 0, 200}}, {10, {255, 0, 0}}, {11, {0, 255, 0}}};
  return p;
}

// Channels: road, sky, car, person. Rows of the fixture:
//   sky       sky+car   sky+car      sky
//   sky       sky       sky+person   -
//   road      road+2car road+car+per road
//   road      road      car          road
ComposedLabelMap fixture_map() {
  LabelMap m(4, 4, 4);
  auto set = [&](std::size_t y, std::size_t x, std::array<std::uint16_t, 4> v) {
    for (std::size_t c = 0; c < 4; ++c) m.at(y, x, c) = v[c];
  };
  const std::array<std::uint16_t, 4> road{1, 0, 0, 0}, sky{0, 1, 0, 0};
  for (std::size_t x = 0; x < 4; ++x) {
    set(0, x, sky);
    set(1, x, sky);
    set(2, x, road);
    set(3, x, road);
  }
  set(0, 1, {0, 1, 1, 0});
  set(0, 2, {0, 1, 1, 0});
  set(1, 2, {0, 1, 0, 1});
  set(1, 3, {0, 0, 0, 0});
  set(2, 1, {1, 0, 2, 0});
  set(2, 2, {1, 0, 1, 1});
  set(3, 2, {0, 0, 1, 0});
  return ComposedLabelMap(m, 2);
}

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::Io;
}

Api small_api(std::size_t count = 12) {
  const Taxonomy tax = fixture::five_categories();
  MemoryBank bank = fixture::tied_bank(tax, Canvas{16, 24}, count, 9);
  return Api(std::move(bank), FusionParams::init(tax.total_count(), 2), Palette::defaults(tax), 3, 2);
}

std::string layout_request(const std::string& extra = "") {
  return R"({"layout": {"canvas": [16, 24], "boxes": [{"category": "car", "x": 2, "y": 8, "h": 6, "w": 8},
             {"category": "person", "x": 14, "y": 6, "h": 9, "w": 3}]})" + extra + "}";
}

}  // namespace

TEST_CASE("preview of the 4x4 fixture matches the palette byte for byte") {
  const Image8 img = render_preview(fixture_map(), preview_taxonomy(), fixture_palette());
  const std::vector<std::uint8_t> want{
      0,   0,   200, 128, 0,   100, 128, 0,   100, 0,   0,   200,  // row 0
      0,   0,   200, 0,   0,   200, 0,   128, 100, 0,   0,   0,    // row 1
      100, 100, 100, 255, 0,   255, 255, 0,   255, 100, 100, 100,  // row 2
      100, 100, 100, 100, 100, 100, 128, 0,   0,   100, 100, 100,  // row 3
  };
  CHECK(img.height == 4);
  CHECK(img.width == 4);
  CHECK(img.channels == 3);
  CHECK(img.pixels == want);
}

TEST_CASE("preview sample cases") {
  const Taxonomy tax = preview_taxonomy();
  const Palette pal = fixture_palette();
  SUBCASE("all-zero map is void") {
    const Image8 img = render_preview(ComposedLabelMap(LabelMap(3, 5, 4), 2), tax, pal);
    for (std::uint8_t v : img.pixels) CHECK(v == 0);
  }
  SUBCASE("single background category fills uniformly") {
    LabelMap m(3, 5, 4);
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t x = 0; x < 5; ++x) m.at(y, x, 0) = 1;
    const Image8 img = render_preview(ComposedLabelMap(m, 2), tax, pal);
    for (std::size_t p = 0; p < 15; ++p) CHECK(img.pixels[p * 3 + 1] == 100);
  }
  SUBCASE("overlap pixels take the accent") {
    const SalientLayout l{Canvas{8, 10}, {{1, 2, 4, 5, 10}, {2, 4, 3, 4, 11}, {0, 7, 2, 2, 10}}};
    const LabelMap fg = rasterize_layout(l, tax);
    LabelMap bg(8, 10, 2);
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 10; ++x) bg.at(y, x, y < 4 ? 1 : 0) = 1;
    const Image8 img = render_preview(compose_label_map(bg, fg), tax, pal);
    const auto contain = oracle::containment(l, tax);
    std::size_t accents = 0, overlaps = 0;
    for (std::size_t p = 0; p < 80; ++p) {
      const bool accent = img.pixels[p * 3] == 255 && img.pixels[p * 3 + 1] == 0 && img.pixels[p * 3 + 2] == 255;
      const bool overlap = contain[p * 2] + contain[p * 2 + 1] >= 2;
      CHECK(accent == overlap);
      accents += accent;
      overlaps += overlap;
    }
    CHECK(overlaps == 8);
    CHECK(accents == 8);
  }
  SUBCASE("a palette gap is a configuration error") {
    Palette gap = pal;
    gap.colors.erase(11);
    CHECK(kind_of([&] { render_preview(fixture_map(), tax, gap); }) == ErrorKind::Configuration);
  }
  SUBCASE("channel mismatch is a shape error") {
    CHECK(kind_of([&] { render_preview(ComposedLabelMap(LabelMap(2, 2, 5), 2), tax, pal); }) == ErrorKind::Shape);
  }
  SUBCASE("palette JSON round trip") {
    const Palette back = Palette::from_json(pal.to_json());
    CHECK(render_preview(fixture_map(), tax, back).pixels == render_preview(fixture_map(), tax, pal).pixels);
    CHECK(kind_of([] { Palette::from_json(json{{"void", {0, 0}}}); }) == ErrorKind::Configuration);
  }
}

TEST_CASE("error kinds map to HTTP statuses") {
  CHECK(http_status(ErrorKind::Validation) == 400);
  CHECK(http_status(ErrorKind::Taxonomy) == 400);
  CHECK(http_status(ErrorKind::Parameter) == 400);
  CHECK(http_status(ErrorKind::NotFound) == 404);
  CHECK(http_status(ErrorKind::Retrieval) == 409);
  CHECK(http_status(ErrorKind::Io) == 500);
}

TEST_CASE("retrieve endpoint") {
  const Api api = small_api();
  const ApiResponse a = api.retrieve(layout_request());
  const ApiResponse b = api.retrieve(layout_request());
  REQUIRE(a.status == 200);
  CHECK(a.body == b.body);
  CHECK(a.headers.count("X-Bachkit-Timing") == 1);
  const json j = json::parse(a.body);
  REQUIRE(j.at("results").size() == 3);
  const RetrievalResult direct =
      retrieve_top_m(api.bank(), layout_from_json(json::parse(layout_request()).at("layout"), api.bank().taxonomy()), 3, 1);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(j["results"][i]["id"] == direct.ranked[i].id);
    CHECK(j["results"][i]["score"] == direct.ranked[i].score.decimal());
    CHECK(j["results"][i]["score_fraction"] == direct.ranked[i].score.fraction());
    CHECK(j["results"][i]["thumbnail_ref"] == "/preview/" + direct.ranked[i].id);
  }
  CHECK(json::parse(api.retrieve(layout_request(R"(, "m": 5)")).body).at("results").size() == 5);
  CHECK(api.retrieve(layout_request(R"(, "m": 0)")).status == 400);
}

TEST_CASE("invalid layouts are rejected with violations") {
  const Api api = small_api();
  const ApiResponse r = api.retrieve(R"({"layout": {"canvas": [16, 24], "boxes": [{"category": "car", "x": 40, "y": 0, "h": 2, "w": 2}, {"category": "car", "x": 0, "y": 0, "h": 0, "w": 2}]}})");
  CHECK(r.status == 400);
  const json j = json::parse(r.body);
  CHECK(j.at("error") == "validation");
  CHECK(j.at("violations").size() == 2);
  const ApiResponse unknown = api.retrieve(R"({"layout": {"canvas": [16, 24], "boxes": [{"category": "dragon", "x": 0, "y": 0, "h": 2, "w": 2}]}})");
  CHECK(unknown.status == 400);
  CHECK(json::parse(unknown.body).at("violations").size() == 1);
  CHECK(api.retrieve("{not json").status == 400);
  CHECK(api.retrieve(R"({"nothing": 1})").status == 400);
  const ApiResponse v = api.validate_layout(R"({"canvas": [16, 24], "boxes": [{"category": "car", "x": 40, "y": 0, "h": 2, "w": 2}]})");
  CHECK(v.status == 200);
  CHECK(json::parse(v.body).at("valid") == false);
  CHECK(json::parse(api.validate_layout(layout_request()).body).at("valid") == true);
}

TEST_CASE("fuse-preview endpoint") {
  const Api api = small_api();
  const json retrieved = json::parse(api.retrieve(layout_request()).body);
  const ApiResponse f = api.fuse_preview(layout_request());
  REQUIRE(f.status == 200);
  CHECK(f.body == api.fuse_preview(layout_request()).body);
  const json j = json::parse(f.body);
  REQUIRE(j.at("previews").size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(j["previews"][i]["id"] == retrieved["results"][i]["id"]);
    CHECK(j["previews"][i]["score"] == retrieved["results"][i]["score"]);
    CHECK(j["previews"][i]["preview_png_base64"].get<std::string>().starts_with("iVBOR"));
  }
  CHECK(j.at("fused").at("extents") == json{16, 24, 8});
  CHECK(j.at("fused").at("channels").size() == 8);

  const std::string pinned_id = retrieved["results"][2]["id"];
  const json pinned = json::parse(api.fuse_preview(layout_request(R"(, "entry_ids": [")" + pinned_id + R"("])")).body);
  CHECK(pinned.at("m") == 1);
  REQUIRE(pinned.at("previews").size() == 1);
  CHECK(pinned["previews"][0]["id"] == pinned_id);
  CHECK(api.fuse_preview(layout_request(R"(, "entry_ids": ["nope"])")).status == 404);
  CHECK(api.fuse_preview(layout_request(R"(, "entry_ids": [])")).status == 400);
}

TEST_CASE("empty bank and unknown ids") {
  const Taxonomy tax = fixture::five_categories();
  const Api empty(MemoryBank(tax, Canvas{16, 24}, {}, 0), FusionParams::init(8, 1), Palette::defaults(tax), 3, 1);
  const ApiResponse r = empty.retrieve(layout_request());
  CHECK(r.status == 409);
  CHECK(json::parse(r.body).at("error") == "retrieval");
  CHECK(empty.fuse_preview(layout_request()).status == 409);
  const Api api = small_api();
  CHECK(api.preview("nope").status == 404);
  const ApiResponse png = api.preview("b0");
  CHECK(png.status == 200);
  CHECK(png.content_type == "image/png");
  CHECK(json::parse(api.bank_stats().body).at("entries") == 12);
  CHECK(json::parse(api.taxonomy().body).at("name") == "five");
}

TEST_CASE("service config parsing") {
  const auto dir = std::filesystem::temp_directory_path() / "bachkit_config_test";
  std::filesystem::remove_all(dir);
  const auto manifest = write_synthetic_bank(dir / "bank", fixture::five_categories(), Canvas{16, 24}, 4, 1);
  std::ofstream(dir / "service.json") << R"({"bank_manifest": "bank/manifest.json", "m": 2, "workers": 3, "listen": "0.0.0.0:9000"})";
  const ServiceConfig c = ServiceConfig::load(dir / "service.json");
  CHECK(std::filesystem::equivalent(c.bank_manifest, manifest));
  CHECK(c.m == 2);
  CHECK(c.workers == 3);
  CHECK(c.host == "0.0.0.0");
  CHECK(c.port == 9000);
  c.validate();
  const Api api = Api::from_config(c);
  CHECK(api.bank().size() == 4);
  std::ofstream(dir / "bad.json") << R"({"bank_manifest": "bank/manifest.json", "m": 0})";
  CHECK(kind_of([&] { ServiceConfig::load(dir / "bad.json").validate(); }) == ErrorKind::Configuration);
  std::ofstream(dir / "missing.json") << R"({"bank_manifest": "nowhere.json"})";
  CHECK(kind_of([&] { ServiceConfig::load(dir / "missing.json").validate(); }) == ErrorKind::Configuration);
  std::filesystem::remove_all(dir);
}

TEST_CASE("HTTP server round trip") {
  const Api api = small_api();
  HttpServer server(api);
  const int port = server.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread t([&] { server.run(); });
  httplib::Client client("127.0.0.1", port);
  auto r = client.Post("/retrieve", layout_request(), "application/json");
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(r->body == api.retrieve(layout_request()).body);
  CHECK(r->has_header("X-Bachkit-Timing"));
  auto bad = client.Post("/retrieve", "{", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  auto fuse = client.Post("/fuse-preview", layout_request(), "application/json");
  REQUIRE(fuse);
  CHECK(fuse->status == 200);
  auto stats = client.Get("/bank/stats");
  REQUIRE(stats);
  CHECK(stats->status == 200);
  auto tax = client.Get("/taxonomy");
  REQUIRE(tax);
  CHECK(tax->status == 200);
  auto png = client.Get("/preview/b1");
  REQUIRE(png);
  CHECK(png->status == 200);
  CHECK(png->get_header_value("Content-Type") == "image/png");
  auto missing = client.Get("/preview/zzz");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  auto valid = client.Post("/layout/validate", layout_request(), "application/json");
  REQUIRE(valid);
  CHECK(valid->status == 200);
  server.stop();
  t.join();
}
