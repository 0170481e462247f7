#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bachkit/error.hpp"

namespace bachkit {

struct Category {
  int id = 0;
  std::string name;
  friend bool operator==(const Category&, const Category&) = default;
};

/// Foreground and background category lists. Declaration order fixes channel
/// indices. Ids live in [0, 255] so segmentation maps fit 8-bit indexed images.
class Taxonomy {
 public:
  Taxonomy() = default;
  Taxonomy(std::string name, std::vector<Category> foreground,
           std::vector<Category> background);

  static Taxonomy cityscapes();
  static Taxonomy ade20k();
  /// "preset:cityscapes", "preset:ade20k", or a JSON taxonomy file.
  static Taxonomy load(const std::filesystem::path& path);
  static Taxonomy from_json_text(std::string_view text);
  std::string to_json_text() const;

  const std::string& name() const noexcept { return name_; }
  std::span<const Category> foreground() const noexcept { return foreground_; }
  std::span<const Category> background() const noexcept { return background_; }
  std::size_t foreground_count() const noexcept { return foreground_.size(); }
  std::size_t background_count() const noexcept { return background_.size(); }
  std::size_t total_count() const noexcept { return foreground_.size() + background_.size(); }

  bool contains(int id) const noexcept { return lookup(id) != kAbsent; }
  bool is_foreground(int id) const noexcept { return lookup(id) >= 0; }
  bool is_background(int id) const noexcept {
    const int v = lookup(id);
    return v != kAbsent && v < 0;
  }
  /// Channel index within the foreground block.
  std::optional<std::size_t> foreground_channel(int id) const noexcept;
  /// Channel index within the background block.
  std::optional<std::size_t> background_channel(int id) const noexcept;
  std::optional<int> id_for_name(std::string_view name) const;
  std::string name_for_id(int id) const;

  friend bool operator==(const Taxonomy& a, const Taxonomy& b) {
    return a.name_ == b.name_ && a.foreground_ == b.foreground_ &&
           a.background_ == b.background_;
  }

 private:
  static constexpr int kAbsent = -100000;
  // >= 0: foreground channel; < 0 and != kAbsent: background channel -(v + 1).
  int lookup(int id) const noexcept {
    return (id < 0 || id > 255) ? kAbsent : slots_[static_cast<std::size_t>(id)];
  }

  std::string name_;
  std::vector<Category> foreground_;
  std::vector<Category> background_;
  std::array<int, 256> slots_{};
};

struct Canvas {
  int height = 256;
  int width = 512;
  friend bool operator==(const Canvas&, const Canvas&) = default;
};

/// x = column, y = row, origin top-left; covers rows y..y+h-1, cols x..x+w-1.
struct BoundingBox {
  int x = 0;
  int y = 0;
  int h = 0;
  int w = 0;
  int category = 0;
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// The box intersected with the canvas; nullopt when nothing remains.
std::optional<BoundingBox> clip_to_canvas(const BoundingBox& box, Canvas canvas);

struct SalientLayout {
  Canvas canvas;
  std::vector<BoundingBox> boxes;
  friend bool operator==(const SalientLayout&, const SalientLayout&) = default;
};

/// H×W×C per-pixel, per-channel occupancy counts, channels innermost.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(std::size_t height, std::size_t width, std::size_t channels)
      : height_(height), width_(width), channels_(channels),
        counts_(height * width * channels, 0) {}

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  std::span<const std::uint16_t> counts() const noexcept { return counts_; }
  std::span<std::uint16_t> counts() noexcept { return counts_; }

  std::uint16_t& at(std::size_t y, std::size_t x, std::size_t c) {
    return counts_[(y * width_ + x) * channels_ + c];
  }
  std::uint16_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return counts_[(y * width_ + x) * channels_ + c];
  }
  /// Sum over channels at one pixel.
  unsigned pixel_sum(std::size_t y, std::size_t x) const;

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<std::uint16_t> counts_;
};

/// Indexed segmentation map: one category id per pixel (the compact form of a
/// one-hot label map).
struct ClassMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> ids;

  std::uint8_t at(std::size_t y, std::size_t x) const { return ids[y * width + x]; }
  friend bool operator==(const ClassMap&, const ClassMap&) = default;
};

/// Run-length encoded pixel set over a row-major H×W grid. Runs are sorted,
/// non-empty, and neither overlap nor touch.
class CategoryBitmap {
 public:
  struct Run {
    std::uint32_t start = 0;
    std::uint32_t length = 0;
    friend bool operator==(const Run&, const Run&) = default;
  };

  CategoryBitmap() = default;
  CategoryBitmap(int category, std::size_t height, std::size_t width)
      : category_(category), height_(height), width_(width) {}

  /// Encodes mask[i] != 0 over a row-major grid.
  static CategoryBitmap from_mask(int category, std::size_t height, std::size_t width,
                                  std::span<const std::uint8_t> mask);
  /// Builds from runs that may be unsorted, overlapping, or adjacent.
  static CategoryBitmap from_runs(int category, std::size_t height, std::size_t width,
                                  std::vector<Run> runs);

  std::vector<std::uint8_t> decode() const;

  int category() const noexcept { return category_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::span<const Run> runs() const noexcept { return runs_; }
  std::uint64_t cardinality() const noexcept { return cardinality_; }
  bool empty() const noexcept { return runs_.empty(); }

  friend bool operator==(const CategoryBitmap&, const CategoryBitmap&) = default;

 private:
  int category_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<Run> runs_;
  std::uint64_t cardinality_ = 0;
};

/// |a ∩ b| by a linear merge of the two run lists.
std::uint64_t intersection_count(const CategoryBitmap& a, const CategoryBitmap& b);
inline std::uint64_t union_count(const CategoryBitmap& a, const CategoryBitmap& b) {
  return a.cardinality() + b.cardinality() - intersection_count(a, b);
}

LabelMap rasterize_layout(const SalientLayout& layout, const Taxonomy& taxonomy);

BoundingBox extract_bbox(const CategoryBitmap& instance);

inline constexpr std::size_t kDefaultMinComponentArea = 16;

/// One box per 4-connected foreground component of at least `min_area` pixels,
/// grouped by foreground declaration order, components in raster-scan order.
SalientLayout boxes_from_segmap(const ClassMap& segmap, const Taxonomy& taxonomy,
                                std::size_t min_area = kDefaultMinComponentArea);
SalientLayout boxes_from_segmap(const LabelMap& one_hot, const Taxonomy& taxonomy,
                                std::size_t min_area = kDefaultMinComponentArea);

/// Conversion between a one-hot label map over all taxonomy channels
/// (foreground block first, then background) and an indexed map.
ClassMap to_class_map(const LabelMap& one_hot, const Taxonomy& taxonomy);
LabelMap to_label_map(const ClassMap& segmap, const Taxonomy& taxonomy);

CategoryBitmap category_union(const SalientLayout& layout, const Taxonomy& taxonomy,
                              int category);
CategoryBitmap category_union(const ClassMap& segmap, const Taxonomy& taxonomy,
                              int category);
/// Pixels where foreground channel of `category` in a rasterized layout is >= 1.
CategoryBitmap category_union(const LabelMap& foreground_map, const Taxonomy& taxonomy,
                              int category);

struct Violation {
  enum class Kind { EmptyLayout, NonPositiveExtent, OutOfCanvas, UnknownCategory, BadCanvas };
  Kind kind;
  std::optional<std::size_t> box_index;
  std::string message;
};

const char* to_string(Violation::Kind kind);

std::vector<Violation> validate_layout(const SalientLayout& layout, const Taxonomy& taxonomy);

/// Throws ErrorKind::Validation (or Taxonomy for unknown categories) listing
/// every violation.
void require_valid_layout(const SalientLayout& layout, const Taxonomy& taxonomy);

// Layout text format (JSON):
//   {"taxonomy": "<name>", "canvas": [H, W],
//    "boxes": [{"category": "<name>" | id, "x": .., "y": .., "h": .., "w": ..}]}
SalientLayout layout_from_json_text(std::string_view text, const Taxonomy& taxonomy);
std::string layout_to_json_text(const SalientLayout& layout, const Taxonomy& taxonomy);
SalientLayout load_layout(const std::filesystem::path& path, const Taxonomy& taxonomy);

}  // namespace bachkit
