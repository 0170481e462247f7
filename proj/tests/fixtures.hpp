#pragma once

// Shared random instances for the unit and acceptance suites.

#include <random>
#include <string>
#include <vector>

#include "bachkit/bank.hpp"
#include "bachkit/synthetic.hpp"

namespace fixture {

inline bachkit::Taxonomy five_categories() {
  return bachkit::Taxonomy("five", {{20, "car"}, {21, "person"}, {22, "bus"}, {23, "rider"}, {24, "bike"}},
                           {{1, "road"}, {2, "sky"}, {3, "building"}});
}

/// Synthetic bank where roughly a fifth of the entries repeat an earlier
/// segmentation map, so exact score ties are common.
inline bachkit::MemoryBank tied_bank(const bachkit::Taxonomy& tax, bachkit::Canvas canvas, std::size_t count,
                                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<bachkit::BankEntry> entries;
  std::vector<bachkit::ClassMap> maps;
  for (std::size_t i = 0; i < count; ++i) {
    bachkit::ClassMap seg = (i > 0 && rng() % 5 == 0) ? maps[rng() % maps.size()]
                                                      : bachkit::synthetic_segmap(tax, canvas, rng, 6);
    maps.push_back(seg);
    entries.push_back(bachkit::BankEntry::from_segmap("b" + std::to_string(i), seg, tax));
  }
  return bachkit::MemoryBank(tax, canvas, std::move(entries), seed);
}

}  // namespace fixture
