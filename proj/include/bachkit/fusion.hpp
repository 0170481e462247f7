#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bachkit/autodiff.hpp"
#include "bachkit/layout.hpp"
#include "bachkit/tensor.hpp"

namespace bachkit {

/// Label map with the background block in channels [0, C_b) followed by the
/// foreground block in [C_b, C_b + C_o).
class ComposedLabelMap {
 public:
  ComposedLabelMap() = default;
  ComposedLabelMap(LabelMap map, std::size_t background_channels);

  const LabelMap& map() const noexcept { return map_; }
  std::size_t background_channels() const noexcept { return background_; }
  std::size_t foreground_channels() const noexcept { return map_.channels() - background_; }
  std::size_t height() const noexcept { return map_.height(); }
  std::size_t width() const noexcept { return map_.width(); }
  std::size_t channels() const noexcept { return map_.channels(); }

  LabelMap background_block() const;
  LabelMap foreground_block() const;
  /// H×W×(C_b + C_o) tensor of the counts.
  Tensor to_tensor() const;

  friend bool operator==(const ComposedLabelMap&, const ComposedLabelMap&) = default;

 private:
  LabelMap map_;
  std::size_t background_ = 0;
};

/// [M_b ; M_q]
ComposedLabelMap compose_label_map(const LabelMap& background, const LabelMap& foreground);
/// [0 ; M_q] with `background_channels` zero channels.
ComposedLabelMap pad_query(const LabelMap& foreground, std::size_t background_channels);

inline constexpr std::size_t kDefaultFusionSteps = 3;

/// Encoder F and refiner M, both 3×3 convolutions k -> k with k = C_o + C_b.
struct FusionParams {
  ConvParams encoder;
  ConvParams refiner;
  std::size_t steps = kDefaultFusionSteps;

  /// Seeded uniform in [-0.05, 0.05].
  static FusionParams init(std::size_t channels, std::uint64_t seed,
                           std::size_t steps = kDefaultFusionSteps);
  std::size_t channels() const { return encoder.out_channels(); }

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn("fusion.encoder.kernel", encoder.kernel);
    fn("fusion.encoder.bias", encoder.bias);
    fn("fusion.refiner.kernel", refiner.kernel);
    fn("fusion.refiner.bias", refiner.bias);
  }
};

/// m_0 = relu(F(q)) + mean_i relu(F(r_i)); m_t = m_{t-1} + relu(M(m_{t-1})).
template <typename G>
typename G::Value fuse_forward(G& g, const typename G::Value& query,
                               const std::vector<typename G::Value>& retrieved,
                               const FusionParams& p) {
  if (retrieved.empty()) fail(ErrorKind::Fusion, "fuse_background: no retrieved maps");
  const Extents& q = g.extents(query);
  std::vector<typename G::Value> encoded;
  encoded.reserve(retrieved.size());
  for (const auto& r : retrieved) {
    const Extents& e = g.extents(r);
    if (e.height() != q.height() || e.width() != q.width() || e.channels() != q.channels()) {
      fail(ErrorKind::Shape, "fuse_background: retrieved map " + to_string(e) +
                                 " does not match query " + to_string(q));
    }
    encoded.push_back(g.relu(g.conv2d(r, p.encoder)));
  }
  auto m = g.add(g.relu(g.conv2d(query, p.encoder)), g.group_mean(encoded));
  for (std::size_t t = 0; t < p.steps; ++t) m = g.add(m, g.relu(g.conv2d(m, p.refiner)));
  return m;
}

/// Fused feature map m̂, H×W×(C_o + C_b).
Tensor fuse_background(const ComposedLabelMap& query, std::span<const ComposedLabelMap> retrieved,
                       const FusionParams& params);

}  // namespace bachkit
