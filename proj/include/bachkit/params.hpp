#pragma once

#include <filesystem>
#include <optional>

#include "bachkit/fusion.hpp"
#include "bachkit/generator.hpp"

namespace bachkit {

/// Parameter fixture directory: `params.json` lists module configurations and
/// one tensor dump file per weight, named after the weight.
struct ParamBundle {
  std::optional<FusionParams> fusion;
  std::optional<GeneratorWeights> generator;
  std::optional<DiscriminatorWeights> discriminator;
};

void save_params(const std::filesystem::path& dir, ParamBundle bundle);
ParamBundle load_params(const std::filesystem::path& dir);

/// Deterministic bundle for a bank with `channels` = C_o + C_b.
ParamBundle init_params(std::size_t channels, std::uint64_t seed,
                        std::size_t fusion_steps = kDefaultFusionSteps);

}  // namespace bachkit
