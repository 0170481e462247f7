#include "bachkit/bank.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include "bachkit/image_io.hpp"
#include "bachkit/parallel.hpp"
#include "binary.hpp"

namespace bachkit {

namespace fs = std::filesystem;

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

BankEntry BankEntry::from_bitmaps(std::string id, std::size_t height, std::size_t width,
                                  std::vector<CategoryBitmap> bitmaps, const Taxonomy& taxonomy) {
  BankEntry e;
  e.id_ = std::move(id);
  e.height_ = height;
  e.width_ = width;
  e.by_channel_.assign(taxonomy.foreground_count(), -1);
  e.counts_.assign(taxonomy.foreground_count(), 0);
  std::sort(bitmaps.begin(), bitmaps.end(), [&](const CategoryBitmap& a, const CategoryBitmap& b) {
    auto rank = [&](int cat) {
      if (auto c = taxonomy.foreground_channel(cat)) return *c;
      return taxonomy.foreground_count() + *taxonomy.background_channel(cat);
    };
    return rank(a.category()) < rank(b.category());
  });
  for (auto& bm : bitmaps) {
    if (!taxonomy.contains(bm.category())) {
      fail(ErrorKind::Ingestion, "entry '" + e.id_ + "': unknown category " +
                                     std::to_string(bm.category()));
    }
    if (bm.height() != height || bm.width() != width) {
      fail(ErrorKind::Ingestion, "entry '" + e.id_ + "': bitmap extents mismatch");
    }
    if (bm.empty()) continue;
    if (auto c = taxonomy.foreground_channel(bm.category())) {
      e.by_channel_[*c] = static_cast<int>(e.foreground_.size());
      e.counts_[*c] = static_cast<std::uint32_t>(bm.cardinality());
      e.foreground_.push_back(std::move(bm));
    } else {
      e.background_.push_back(std::move(bm));
    }
  }
  return e;
}

BankEntry BankEntry::from_segmap(std::string id, const ClassMap& segmap,
                                 const Taxonomy& taxonomy) {
  std::map<int, std::vector<CategoryBitmap::Run>> runs;
  const std::size_t n = segmap.ids.size();
  if (n != segmap.height * segmap.width) {
    fail(ErrorKind::Ingestion, "entry '" + id + "': segmentation map size mismatch");
  }
  std::size_t i = 0;
  while (i < n) {
    const int cat = segmap.ids[i];
    if (!taxonomy.contains(cat)) {
      fail(ErrorKind::Ingestion, "entry '" + id + "': pixel (" + std::to_string(i / segmap.width) +
                                     ", " + std::to_string(i % segmap.width) +
                                     ") has category id " + std::to_string(cat) +
                                     " outside the taxonomy (not one-hot)");
    }
    const std::size_t start = i;
    while (i < n && segmap.ids[i] == cat) ++i;
    runs[cat].push_back({static_cast<std::uint32_t>(start), static_cast<std::uint32_t>(i - start)});
  }
  std::vector<CategoryBitmap> bitmaps;
  for (auto& [cat, r] : runs) {
    bitmaps.push_back(CategoryBitmap::from_runs(cat, segmap.height, segmap.width, std::move(r)));
  }
  return from_bitmaps(std::move(id), segmap.height, segmap.width, std::move(bitmaps), taxonomy);
}

ClassMap BankEntry::segmap() const {
  ClassMap m{height_, width_, std::vector<std::uint8_t>(height_ * width_, 0)};
  for (const auto* list : {&foreground_, &background_}) {
    for (const CategoryBitmap& b : *list) {
      for (const auto& r : b.runs()) {
        std::fill_n(m.ids.begin() + r.start, r.length, static_cast<std::uint8_t>(b.category()));
      }
    }
  }
  return m;
}

MemoryBank::MemoryBank(Taxonomy taxonomy, Canvas canvas, std::vector<BankEntry> entries,
                       std::uint64_t checksum, CacheInfo cache)
    : taxonomy_(std::move(taxonomy)),
      canvas_(canvas),
      entries_(std::move(entries)),
      checksum_(checksum),
      cache_(cache) {
  std::set<std::string_view> ids;
  for (const BankEntry& e : entries_) {
    if (!ids.insert(e.id()).second) {
      fail(ErrorKind::Ingestion, "entry id collision: '" + e.id() + "'");
    }
    if (e.height() != static_cast<std::size_t>(canvas_.height) ||
        e.width() != static_cast<std::size_t>(canvas_.width)) {
      fail(ErrorKind::Ingestion, "entry '" + e.id() + "': extents " + std::to_string(e.height()) +
                                     "x" + std::to_string(e.width()) +
                                     " differ from bank canvas " +
                                     std::to_string(canvas_.height) + "x" +
                                     std::to_string(canvas_.width));
    }
  }
}

std::optional<std::size_t> MemoryBank::find(std::string_view id) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].id() == id) return i;
  }
  return std::nullopt;
}

// Cache sidecar ---------------------------------------------------------------

namespace {

constexpr std::uint32_t kCacheMagic = 0x31434b42;  // "BKC1"
constexpr std::uint32_t kCacheVersion = 1;

struct SourceStamp {
  std::uint64_t size = 0;
  std::int64_t mtime = 0;
};

SourceStamp stamp_of(const fs::path& p) {
  return {static_cast<std::uint64_t>(fs::file_size(p)),
          static_cast<std::int64_t>(fs::last_write_time(p).time_since_epoch().count())};
}

fs::path sidecar_path(const fs::path& segmap) {
  fs::path p = segmap;
  p += ".bkc";
  return p;
}

void write_sidecar(const fs::path& path, std::uint64_t checksum, SourceStamp stamp,
                   const BankEntry& e) {
  detail::ByteWriter w;
  w.put(kCacheMagic);
  w.put(kCacheVersion);
  w.put(checksum);
  w.put(stamp.size);
  w.put(stamp.mtime);
  w.put(static_cast<std::uint32_t>(e.height()));
  w.put(static_cast<std::uint32_t>(e.width()));
  w.put(static_cast<std::uint32_t>(e.foreground().size() + e.background().size()));
  for (const auto list : {e.foreground(), e.background()}) {
    for (const CategoryBitmap& b : list) {
      w.put(static_cast<std::int32_t>(b.category()));
      w.put(static_cast<std::uint32_t>(b.runs().size()));
      for (const auto& r : b.runs()) {
        w.put(r.start);
        w.put(r.length);
      }
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) return;  // read-only bank directory: run without a cache
  out.write(reinterpret_cast<const char*>(w.bytes().data()),
            static_cast<std::streamsize>(w.bytes().size()));
}

std::optional<BankEntry> read_sidecar(const fs::path& path, std::uint64_t checksum,
                                      SourceStamp stamp, const std::string& id,
                                      const Taxonomy& taxonomy) {
  std::error_code ec;
  if (!fs::exists(path, ec)) return std::nullopt;
  try {
    const auto bytes = read_bytes(path);
    detail::ByteReader r(bytes);
    if (r.get<std::uint32_t>() != kCacheMagic || r.get<std::uint32_t>() != kCacheVersion ||
        r.get<std::uint64_t>() != checksum || r.get<std::uint64_t>() != stamp.size ||
        r.get<std::int64_t>() != stamp.mtime) {
      return std::nullopt;
    }
    const auto h = r.get<std::uint32_t>();
    const auto w = r.get<std::uint32_t>();
    const auto n = r.get<std::uint32_t>();
    std::vector<CategoryBitmap> bitmaps;
    for (std::uint32_t k = 0; k < n; ++k) {
      const auto cat = r.get<std::int32_t>();
      const auto nruns = r.get<std::uint32_t>();
      std::vector<CategoryBitmap::Run> runs(nruns);
      for (auto& run : runs) {
        run.start = r.get<std::uint32_t>();
        run.length = r.get<std::uint32_t>();
      }
      bitmaps.push_back(CategoryBitmap::from_runs(cat, h, w, std::move(runs)));
    }
    if (!r.done()) return std::nullopt;
    return BankEntry::from_bitmaps(id, h, w, std::move(bitmaps), taxonomy);
  } catch (const Error&) {
    return std::nullopt;
  }
}

struct ManifestEntry {
  std::string id;
  fs::path segmap;
  std::optional<std::string> image;
};

}  // namespace

MemoryBank MemoryBank::ingest(const fs::path& manifest, std::size_t workers, bool use_cache) {
  const auto manifest_bytes = read_bytes(manifest);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(manifest_bytes.begin(), manifest_bytes.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Ingestion, "malformed manifest " + manifest.string() + ": " + e.what());
  }
  const fs::path base = manifest.parent_path();
  auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || p.starts_with("preset:") ? path : base / path;
  };
  if (!j.contains("taxonomy_path") || !j.at("taxonomy_path").is_string()) {
    fail(ErrorKind::Ingestion, "manifest: 'taxonomy_path' missing");
  }
  const std::string tax_ref = j.at("taxonomy_path").get<std::string>();
  const fs::path tax_path = resolve(tax_ref);
  Taxonomy taxonomy = Taxonomy::load(tax_path);
  std::uint64_t checksum = fnv1a64(manifest_bytes);
  if (!tax_ref.starts_with("preset:")) checksum = fnv1a64(read_bytes(tax_path), checksum);

  if (!j.contains("canvas") || !j.at("canvas").is_array() || j.at("canvas").size() != 2) {
    fail(ErrorKind::Ingestion, "manifest: 'canvas' must be [H, W]");
  }
  const Canvas canvas{j.at("canvas")[0].get<int>(), j.at("canvas")[1].get<int>()};

  std::vector<ManifestEntry> listed;
  std::set<std::string> seen;
  for (const auto& je : j.value("entries", nlohmann::json::array())) {
    ManifestEntry m;
    if (!je.contains("id") || !je.at("id").is_string() || !je.contains("segmap_path")) {
      fail(ErrorKind::Ingestion, "manifest: entries need 'id' and 'segmap_path'");
    }
    m.id = je.at("id").get<std::string>();
    if (!seen.insert(m.id).second) fail(ErrorKind::Ingestion, "entry id collision: '" + m.id + "'");
    m.segmap = resolve(je.at("segmap_path").get<std::string>());
    if (je.contains("image_path") && je.at("image_path").is_string()) {
      m.image = je.at("image_path").get<std::string>();
    }
    listed.push_back(std::move(m));
  }

  std::vector<BankEntry> entries(listed.size());
  std::vector<std::uint8_t> hit(listed.size(), 0);
  for_each_chunk(listed.size(), workers == 0 ? default_workers() : workers,
                 [&](std::size_t, Chunk c) {
    for (std::size_t i = c.begin; i < c.end; ++i) {
      const ManifestEntry& m = listed[i];
      try {
        const SourceStamp stamp = stamp_of(m.segmap);
        std::optional<BankEntry> cached;
        if (use_cache) cached = read_sidecar(sidecar_path(m.segmap), checksum, stamp, m.id, taxonomy);
        if (cached) {
          entries[i] = std::move(*cached);
          hit[i] = 1;
        } else {
          const Image8 img = read_image(m.segmap);
          if (img.channels != 1) {
            fail(ErrorKind::Ingestion, "segmentation map must be single-channel");
          }
          if (img.height != static_cast<std::size_t>(canvas.height) ||
              img.width != static_cast<std::size_t>(canvas.width)) {
            fail(ErrorKind::Ingestion, "extents " + std::to_string(img.height) + "x" +
                                           std::to_string(img.width) + " differ from canvas " +
                                           std::to_string(canvas.height) + "x" +
                                           std::to_string(canvas.width));
          }
          entries[i] = BankEntry::from_segmap(m.id, ClassMap{img.height, img.width, img.pixels},
                                              taxonomy);
          if (use_cache) write_sidecar(sidecar_path(m.segmap), checksum, stamp, entries[i]);
        }
        entries[i].set_refs(m.segmap, m.image);
      } catch (const std::exception& e) {
        fail(ErrorKind::Ingestion, "entry '" + m.id + "': " + e.what());
      } catch (...) {
        fail(ErrorKind::Ingestion, "entry '" + m.id + "': unknown failure");
      }
    }
  });
  CacheInfo cache;
  for (auto h : hit) (h ? cache.hits : cache.misses)++;
  return MemoryBank(std::move(taxonomy), canvas, std::move(entries), checksum, cache);
}

// Background split ------------------------------------------------------------

LabelMap split_background(const ClassMap& segmap, const Taxonomy& taxonomy) {
  const std::size_t H = segmap.height, W = segmap.width, n = H * W;
  std::vector<std::int32_t> dist(n, -1);
  std::vector<std::int32_t> label(n, 0);
  std::vector<std::size_t> frontier, next;
  for (std::size_t p = 0; p < n; ++p) {
    const int id = segmap.ids[p];
    if (!taxonomy.contains(id)) {
      fail(ErrorKind::Validation, "split_background: unknown category id " + std::to_string(id));
    }
    if (taxonomy.is_background(id)) {
      dist[p] = 0;
      label[p] = id;
      frontier.push_back(p);
    }
  }
  if (frontier.empty()) {
    fail(ErrorKind::DegenerateBackground, "split_background: map has no background pixels");
  }
  // Layered BFS. A pixel at distance d+1 inherits the minimum label over its
  // neighbours at distance d, which equals the minimum label over all nearest
  // background pixels.
  for (std::int32_t d = 0; !frontier.empty(); ++d) {
    next.clear();
    for (std::size_t p : frontier) {
      const std::size_t y = p / W, x = p % W;
      auto relax = [&](std::size_t q) {
        if (dist[q] == -1) {
          dist[q] = d + 1;
          label[q] = label[p];
          next.push_back(q);
        } else if (dist[q] == d + 1) {
          label[q] = std::min(label[q], label[p]);
        }
      };
      if (y > 0) relax(p - W);
      if (y + 1 < H) relax(p + W);
      if (x > 0) relax(p - 1);
      if (x + 1 < W) relax(p + 1);
    }
    frontier.swap(next);
  }
  LabelMap out(H, W, taxonomy.background_count());
  const std::size_t C = out.channels();
  for (std::size_t p = 0; p < n; ++p) {
    out.counts()[p * C + *taxonomy.background_channel(label[p])] = 1;
  }
  return out;
}

LabelMap split_background(const BankEntry& entry, const Taxonomy& taxonomy) {
  return split_background(entry.segmap(), taxonomy);
}

// Stats -----------------------------------------------------------------------

BankStats bank_stats(const MemoryBank& bank) {
  BankStats s;
  s.entry_count = bank.size();
  s.canvas = bank.canvas();
  s.checksum = bank.checksum();
  s.cache = bank.cache_info();
  const Taxonomy& tax = bank.taxonomy();
  std::vector<std::uint64_t> area(tax.foreground_count(), 0);
  s.foreground.resize(tax.foreground_count());
  for (std::size_t c = 0; c < tax.foreground_count(); ++c) {
    s.foreground[c].id = tax.foreground()[c].id;
    s.foreground[c].name = tax.foreground()[c].name;
  }
  for (const BankEntry& e : bank.entries()) {
    const auto counts = e.foreground_counts();
    for (std::size_t c = 0; c < counts.size(); ++c) {
      if (counts[c] == 0) continue;
      ++s.foreground[c].frequency;
      area[c] += counts[c];
    }
  }
  for (std::size_t c = 0; c < s.foreground.size(); ++c) {
    if (s.foreground[c].frequency > 0) {
      s.foreground[c].mean_area =
          static_cast<double>(area[c]) / static_cast<double>(s.foreground[c].frequency);
    }
  }
  return s;
}

nlohmann::json to_json(const BankStats& stats) {
  nlohmann::json cats = nlohmann::json::array();
  for (const CategoryStats& c : stats.foreground) {
    cats.push_back({{"id", c.id}, {"name", c.name}, {"frequency", c.frequency},
                    {"mean_area", c.mean_area}});
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(stats.checksum));
  return {{"entries", stats.entry_count},
          {"canvas", {stats.canvas.height, stats.canvas.width}},
          {"checksum", hex},
          {"categories", cats},
          {"cache", {{"hits", stats.cache.hits}, {"misses", stats.cache.misses}}}};
}

}  // namespace bachkit
