#include "bachkit/fusion.hpp"

#include <random>

namespace bachkit {

ComposedLabelMap::ComposedLabelMap(LabelMap map, std::size_t background_channels)
    : map_(std::move(map)), background_(background_channels) {
  if (background_ > map_.channels()) {
    fail(ErrorKind::Shape, "composed label map: background block exceeds channel count");
  }
}

namespace {

LabelMap channel_block(const LabelMap& m, std::size_t begin, std::size_t count) {
  LabelMap out(m.height(), m.width(), count);
  const std::size_t C = m.channels();
  const std::size_t pixels = m.height() * m.width();
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t c = 0; c < count; ++c) out.counts()[p * count + c] = m.counts()[p * C + begin + c];
  }
  return out;
}

}  // namespace

LabelMap ComposedLabelMap::background_block() const { return channel_block(map_, 0, background_); }

LabelMap ComposedLabelMap::foreground_block() const {
  return channel_block(map_, background_, foreground_channels());
}

Tensor ComposedLabelMap::to_tensor() const {
  Tensor t = Tensor::image(map_.height(), map_.width(), map_.channels());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = map_.counts()[i];
  return t;
}

ComposedLabelMap compose_label_map(const LabelMap& background, const LabelMap& foreground) {
  if (background.height() != foreground.height() || background.width() != foreground.width()) {
    fail(ErrorKind::Shape, "compose_label_map: background " + std::to_string(background.height()) +
                               "x" + std::to_string(background.width()) + " vs foreground " +
                               std::to_string(foreground.height()) + "x" +
                               std::to_string(foreground.width()));
  }
  const std::size_t cb = background.channels(), co = foreground.channels();
  LabelMap out(background.height(), background.width(), cb + co);
  const std::size_t pixels = background.height() * background.width();
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy_n(background.counts().begin() + static_cast<std::ptrdiff_t>(p * cb), cb,
                out.counts().begin() + static_cast<std::ptrdiff_t>(p * (cb + co)));
    std::copy_n(foreground.counts().begin() + static_cast<std::ptrdiff_t>(p * co), co,
                out.counts().begin() + static_cast<std::ptrdiff_t>(p * (cb + co) + cb));
  }
  return ComposedLabelMap(std::move(out), cb);
}

ComposedLabelMap pad_query(const LabelMap& foreground, std::size_t background_channels) {
  return compose_label_map(LabelMap(foreground.height(), foreground.width(), background_channels),
                           foreground);
}

FusionParams FusionParams::init(std::size_t channels, std::uint64_t seed, std::size_t steps) {
  std::mt19937_64 rng(seed);
  FusionParams p;
  p.encoder = ConvParams::uniform(channels, channels, 0.05, rng);
  p.refiner = ConvParams::uniform(channels, channels, 0.05, rng);
  p.steps = steps;
  return p;
}

Tensor fuse_background(const ComposedLabelMap& query, std::span<const ComposedLabelMap> retrieved,
                       const FusionParams& params) {
  if (retrieved.empty()) fail(ErrorKind::Fusion, "fuse_background: no retrieved maps");
  if (query.channels() != params.encoder.in_channels() ||
      params.refiner.in_channels() != params.encoder.out_channels()) {
    fail(ErrorKind::Shape, "fuse_background: parameters expect " +
                               std::to_string(params.encoder.in_channels()) +
                               " channels, query has " + std::to_string(query.channels()));
  }
  Eval g;
  std::vector<Tensor> r;
  r.reserve(retrieved.size());
  for (const ComposedLabelMap& m : retrieved) r.push_back(m.to_tensor());
  return fuse_forward(g, query.to_tensor(), r, params);
}

}  // namespace bachkit
