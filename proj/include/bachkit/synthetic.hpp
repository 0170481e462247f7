#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>

#include "bachkit/bank.hpp"
#include "bachkit/layout.hpp"

namespace bachkit {

/// Street-like segmentation map: horizontal background bands with a jittered
/// boundary, then 1..max_objects foreground rectangles standing in the lower
/// half.
ClassMap synthetic_segmap(const Taxonomy& taxonomy, Canvas canvas, std::mt19937_64& rng,
                          std::size_t max_objects = 6);

/// 1..max_boxes boxes fully inside the canvas, each at least 2×2, reaching
/// into the lower half.
SalientLayout random_layout(const Taxonomy& taxonomy, Canvas canvas, std::mt19937_64& rng,
                            std::size_t max_boxes = 3);

/// In-memory bank of `count` synthetic entries with ids "e0000", "e0001", ...
MemoryBank synthetic_bank(const Taxonomy& taxonomy, Canvas canvas, std::size_t count,
                          std::uint64_t seed);

/// Writes taxonomy.json, manifest.json and segmaps/<id>.png under `dir`;
/// returns the manifest path.
std::filesystem::path write_synthetic_bank(const std::filesystem::path& dir,
                                           const Taxonomy& taxonomy, Canvas canvas,
                                           std::size_t count, std::uint64_t seed);

}  // namespace bachkit
