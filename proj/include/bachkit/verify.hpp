#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "bachkit/autodiff.hpp"

namespace bachkit {

struct GradientCase {
  std::string name;
  GradCheckResult result;
  std::size_t attempts = 0;  // sample points drawn before one cleared the kink margin
};

/// Central-difference checks (eps 1e-5) of conv2d, channel_normalize,
/// spade_layer, the fusion block and a composed fusion + generator network,
/// each on small random instances reduced by a random-weighted readout.
std::vector<GradientCase> verify_gradients(std::uint64_t seed);
nlohmann::json to_json(const std::vector<GradientCase>& cases);

}  // namespace bachkit
