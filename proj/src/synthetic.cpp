#include "bachkit/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "bachkit/image_io.hpp"

namespace bachkit {

namespace fs = std::filesystem;

namespace {

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

std::string entry_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "e%04zu", i);
  return buf;
}

}  // namespace

ClassMap synthetic_segmap(const Taxonomy& taxonomy, Canvas canvas, std::mt19937_64& rng,
                          std::size_t max_objects) {
  if (taxonomy.background_count() == 0) {
    fail(ErrorKind::Taxonomy, "synthetic_segmap: taxonomy has no background categories");
  }
  if (canvas.height <= 0 || canvas.width <= 0) fail(ErrorKind::Parameter, "synthetic_segmap: bad canvas");
  const auto H = static_cast<std::size_t>(canvas.height), W = static_cast<std::size_t>(canvas.width);
  ClassMap m{H, W, std::vector<std::uint8_t>(H * W)};
  const auto bg = taxonomy.background();
  const int bands = uniform_int(rng, 1, std::min<int>(3, static_cast<int>(bg.size())));
  std::vector<int> ids;
  for (int b = 0; b < bands; ++b) ids.push_back(bg[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(bg.size()) - 1))].id);
  std::vector<int> cuts;
  for (int b = 1; b < bands; ++b) cuts.push_back(uniform_int(rng, 1, canvas.height - 1));
  std::sort(cuts.begin(), cuts.end());
  const int wobble = std::max(1, canvas.height / 16);
  const int phase = uniform_int(rng, 0, 31);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const int shift = ((static_cast<int>(x) + phase) / 8) % (2 * wobble + 1) - wobble;
      std::size_t band = 0;
      while (band < cuts.size() && static_cast<int>(y) + shift >= cuts[band]) ++band;
      m.ids[y * W + x] = static_cast<std::uint8_t>(ids[band]);
    }
  }
  const auto fg = taxonomy.foreground();
  if (!fg.empty()) {
    const int objects = uniform_int(rng, 1, static_cast<int>(std::max<std::size_t>(1, max_objects)));
    for (int o = 0; o < objects; ++o) {
      const int id = fg[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(fg.size()) - 1))].id;
      const int h = uniform_int(rng, std::max(1, canvas.height / 8), std::max(1, canvas.height / 2));
      const int w = uniform_int(rng, std::max(1, canvas.width / 16), std::max(1, canvas.width / 4));
      const int bottom = uniform_int(rng, std::max(h, canvas.height / 2), canvas.height);
      const int y0 = bottom - h;
      const int x0 = uniform_int(rng, 0, canvas.width - w);
      for (int y = y0; y < y0 + h; ++y) {
        for (int x = x0; x < x0 + w; ++x) m.ids[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)] = static_cast<std::uint8_t>(id);
      }
    }
  }
  return m;
}

SalientLayout random_layout(const Taxonomy& taxonomy, Canvas canvas, std::mt19937_64& rng,
                            std::size_t max_boxes) {
  if (taxonomy.foreground_count() == 0) fail(ErrorKind::Taxonomy, "random_layout: no foreground categories");
  if (canvas.height < 2 || canvas.width < 2 || max_boxes == 0) {
    fail(ErrorKind::Parameter, "random_layout: canvas or box count too small");
  }
  SalientLayout l{canvas, {}};
  const auto fg = taxonomy.foreground();
  const int n = uniform_int(rng, 1, static_cast<int>(max_boxes));
  for (int i = 0; i < n; ++i) {
    BoundingBox b;
    b.h = uniform_int(rng, 2, std::max(2, canvas.height / 2));
    b.w = uniform_int(rng, 2, std::max(2, canvas.width / 4));
    b.y = uniform_int(rng, std::max(0, canvas.height / 2 - b.h), canvas.height - b.h);
    b.x = uniform_int(rng, 0, canvas.width - b.w);
    b.category = fg[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(fg.size()) - 1))].id;
    l.boxes.push_back(b);
  }
  return l;
}

MemoryBank synthetic_bank(const Taxonomy& taxonomy, Canvas canvas, std::size_t count,
                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<BankEntry> entries;
  entries.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    entries.push_back(BankEntry::from_segmap(entry_id(i), synthetic_segmap(taxonomy, canvas, rng), taxonomy));
  }
  return MemoryBank(taxonomy, canvas, std::move(entries), seed);
}

fs::path write_synthetic_bank(const fs::path& dir, const Taxonomy& taxonomy, Canvas canvas,
                              std::size_t count, std::uint64_t seed) {
  std::error_code ec;
  fs::create_directories(dir / "segmaps", ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream t(dir / "taxonomy.json");
    t << taxonomy.to_json_text() << '\n';
    if (!t) fail(ErrorKind::Io, "cannot write taxonomy.json");
  }
  std::mt19937_64 rng(seed);
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < count; ++i) {
    const ClassMap m = synthetic_segmap(taxonomy, canvas, rng);
    const std::string id = entry_id(i);
    write_image(dir / "segmaps" / (id + ".png"), Image8{m.height, m.width, 1, m.ids});
    entries.push_back({{"id", id}, {"segmap_path", "segmaps/" + id + ".png"}});
  }
  const nlohmann::json manifest = {{"taxonomy_path", "taxonomy.json"},
                                   {"canvas", {canvas.height, canvas.width}},
                                   {"entries", entries}};
  const fs::path path = dir / "manifest.json";
  std::ofstream out(path);
  out << manifest.dump(2) << '\n';
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  return path;
}

}  // namespace bachkit
