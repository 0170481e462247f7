#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bachkit/layout.hpp"

namespace bachkit {

/// One (image, segmentation map) pair of the bank. The segmentation map is held
/// as run-length bitmaps of every category present, split into the foreground
/// block (used by retrieval) and the background block (used to rebuild M_b).
class BankEntry {
 public:
  BankEntry() = default;
  static BankEntry from_segmap(std::string id, const ClassMap& segmap, const Taxonomy& taxonomy);
  static BankEntry from_bitmaps(std::string id, std::size_t height, std::size_t width,
                                std::vector<CategoryBitmap> bitmaps, const Taxonomy& taxonomy);

  const std::string& id() const noexcept { return id_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }

  /// Present foreground categories, in taxonomy declaration order.
  std::span<const CategoryBitmap> foreground() const noexcept { return foreground_; }
  std::span<const CategoryBitmap> background() const noexcept { return background_; }
  /// Bitmap for a foreground channel, or nullptr when the category is absent.
  const CategoryBitmap* foreground_bitmap(std::size_t channel) const noexcept {
    const int i = channel < by_channel_.size() ? by_channel_[channel] : -1;
    return i < 0 ? nullptr : &foreground_[static_cast<std::size_t>(i)];
  }
  /// Pixel count per foreground channel (0 for absent categories).
  std::span<const std::uint32_t> foreground_counts() const noexcept { return counts_; }

  ClassMap segmap() const;

  const std::optional<std::string>& image_ref() const noexcept { return image_ref_; }
  const std::filesystem::path& segmap_path() const noexcept { return segmap_path_; }
  void set_refs(std::filesystem::path segmap_path, std::optional<std::string> image_ref) {
    segmap_path_ = std::move(segmap_path);
    image_ref_ = std::move(image_ref);
  }

 private:
  std::string id_;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<CategoryBitmap> foreground_;
  std::vector<CategoryBitmap> background_;
  std::vector<int> by_channel_;
  std::vector<std::uint32_t> counts_;
  std::filesystem::path segmap_path_;
  std::optional<std::string> image_ref_;
};

struct CacheInfo {
  std::size_t hits = 0;
  std::size_t misses = 0;
};

/// Immutable collection of bank entries sharing one taxonomy and canvas.
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(Taxonomy taxonomy, Canvas canvas, std::vector<BankEntry> entries,
             std::uint64_t checksum, CacheInfo cache = {});

  /// Manifest (JSON): {"taxonomy_path": .., "canvas": [H, W],
  ///   "entries": [{"id": .., "segmap_path": .., "image_path": ..?}]}
  /// Relative paths resolve against the manifest's directory.
  static MemoryBank ingest(const std::filesystem::path& manifest, std::size_t workers = 0,
                           bool use_cache = true);

  const Taxonomy& taxonomy() const noexcept { return taxonomy_; }
  Canvas canvas() const noexcept { return canvas_; }
  std::span<const BankEntry> entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::uint64_t checksum() const noexcept { return checksum_; }
  const CacheInfo& cache_info() const noexcept { return cache_; }
  std::optional<std::size_t> find(std::string_view id) const;

 private:
  Taxonomy taxonomy_;
  Canvas canvas_;
  std::vector<BankEntry> entries_;
  std::uint64_t checksum_ = 0;
  CacheInfo cache_;
};

/// Background label map H×W×C_b: background pixels keep their category; every
/// foreground pixel takes the category of the nearest background pixel in L1
/// (4-neighbour) distance, ties going to the smaller category id.
LabelMap split_background(const ClassMap& segmap, const Taxonomy& taxonomy);
LabelMap split_background(const BankEntry& entry, const Taxonomy& taxonomy);

struct CategoryStats {
  int id = 0;
  std::string name;
  std::size_t frequency = 0;  // entries containing the category
  double mean_area = 0.0;     // mean pixel count over those entries
};

struct BankStats {
  std::size_t entry_count = 0;
  Canvas canvas;
  std::uint64_t checksum = 0;
  std::vector<CategoryStats> foreground;
  CacheInfo cache;
};

BankStats bank_stats(const MemoryBank& bank);
nlohmann::json to_json(const BankStats& stats);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace bachkit
