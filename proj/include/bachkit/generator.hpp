#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bachkit/autodiff.hpp"
#include "bachkit/fusion.hpp"
#include "bachkit/kernel.hpp"
#include "bachkit/tensor.hpp"

namespace bachkit {

/// γ and β predictors: independent single 3×3 convolutions from the condition
/// channels to the modulated activation's channels.
struct SpadeParams {
  ConvParams gamma;
  ConvParams beta;
};

/// ĥ = norm(h) ⊗ γ(m̂) ⊕ β(m̂); the condition is nearest-resampled to h's extents.
template <typename G>
typename G::Value spade_forward(G& g, const typename G::Value& h,
                                const typename G::Value& condition, const SpadeParams& p,
                                double epsilon) {
  const Extents& eh = g.extents(h);
  if (p.gamma.out_channels() != eh.channels() || p.beta.out_channels() != eh.channels()) {
    fail(ErrorKind::Shape, "spade_layer: modulation nets produce " +
                               std::to_string(p.gamma.out_channels()) + "/" +
                               std::to_string(p.beta.out_channels()) +
                               " channels for an activation with " +
                               std::to_string(eh.channels()));
  }
  const Extents& ec = g.extents(condition);
  auto cond = (ec.height() == eh.height() && ec.width() == eh.width())
                  ? condition
                  : g.nearest_resize(condition, eh.height(), eh.width());
  auto gamma = g.conv2d(cond, p.gamma);
  auto beta = g.conv2d(cond, p.beta);
  return g.add(g.mul(g.channel_normalize(h, epsilon), gamma), beta);
}

Tensor spade_layer(const Tensor& h, const Tensor& condition, const SpadeParams& params,
                   double epsilon = kernel::kDefaultNormEpsilon);

struct GeneratorConfig {
  std::size_t condition_channels = 0;
  std::size_t features = 16;
  std::size_t blocks = 2;
  std::size_t upsampling_blocks = 1;
  double epsilon = kernel::kDefaultNormEpsilon;
};

struct SpadeResBlock {
  SpadeParams norm1;
  ConvParams conv1;
  SpadeParams norm2;
  ConvParams conv2;
  bool upsample = false;
};

/// Input projection at 1/2^u resolution, SPADE residual blocks (the first u
/// followed by 2× nearest upsampling), then relu, a 3×3 projection to RGB, tanh.
struct GeneratorWeights {
  GeneratorConfig config;
  ConvParams input;
  std::vector<SpadeResBlock> blocks;
  ConvParams output;

  static GeneratorWeights init(const GeneratorConfig& config, std::uint64_t seed);

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn("generator.input.kernel", input.kernel);
    fn("generator.input.bias", input.bias);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string b = "generator.block" + std::to_string(i) + ".";
      auto& blk = blocks[i];
      fn(b + "norm1.gamma.kernel", blk.norm1.gamma.kernel);
      fn(b + "norm1.gamma.bias", blk.norm1.gamma.bias);
      fn(b + "norm1.beta.kernel", blk.norm1.beta.kernel);
      fn(b + "norm1.beta.bias", blk.norm1.beta.bias);
      fn(b + "conv1.kernel", blk.conv1.kernel);
      fn(b + "conv1.bias", blk.conv1.bias);
      fn(b + "norm2.gamma.kernel", blk.norm2.gamma.kernel);
      fn(b + "norm2.gamma.bias", blk.norm2.gamma.bias);
      fn(b + "norm2.beta.kernel", blk.norm2.beta.kernel);
      fn(b + "norm2.beta.bias", blk.norm2.beta.bias);
      fn(b + "conv2.kernel", blk.conv2.kernel);
      fn(b + "conv2.bias", blk.conv2.bias);
    }
    fn("generator.output.kernel", output.kernel);
    fn("generator.output.bias", output.bias);
  }
};

void check_generator(const GeneratorWeights& w, const Extents& condition);

template <typename G>
typename G::Value spade_resblock_forward(G& g, const typename G::Value& x,
                                         const typename G::Value& condition,
                                         const SpadeResBlock& b, double epsilon) {
  auto dx = g.conv2d(g.relu(spade_forward(g, x, condition, b.norm1, epsilon)), b.conv1);
  dx = g.conv2d(g.relu(spade_forward(g, dx, condition, b.norm2, epsilon)), b.conv2);
  return g.add(x, dx);
}

template <typename G>
typename G::Value generate_forward(G& g, const typename G::Value& condition,
                                   const GeneratorWeights& w) {
  const Extents& e = g.extents(condition);
  check_generator(w, e);
  const std::size_t div = std::size_t{1} << w.config.upsampling_blocks;
  auto x = g.conv2d(g.nearest_resize(condition, e.height() / div, e.width() / div), w.input);
  for (const SpadeResBlock& b : w.blocks) {
    x = spade_resblock_forward(g, x, condition, b, w.config.epsilon);
    if (b.upsample) {
      const Extents& ex = g.extents(x);
      x = g.nearest_resize(x, ex.height() * 2, ex.width() * 2);
    }
  }
  return g.tanh(g.conv2d(g.relu(x), w.output));
}

/// RGB image H×W×3 in [-1, 1]; deterministic in (m̂, weights).
Tensor generate(const Tensor& feature_map, const GeneratorWeights& weights);

struct DiscriminatorConfig {
  std::size_t image_channels = 3;
  std::size_t condition_channels = 0;
  std::size_t features = 16;
  std::size_t scales = 2;
  std::size_t layers = 3;
  double epsilon = kernel::kDefaultNormEpsilon;
};

/// Per scale: conv+relu, then (conv, instance norm, relu) for each middle
/// layer, then a conv to one logit channel. Scale s sees inputs average-pooled
/// s times.
struct DiscriminatorWeights {
  DiscriminatorConfig config;
  std::vector<std::vector<ConvParams>> scales;

  static DiscriminatorWeights init(const DiscriminatorConfig& config, std::uint64_t seed);
  static DiscriminatorWeights zeros(const DiscriminatorConfig& config);

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    for (std::size_t s = 0; s < scales.size(); ++s) {
      for (std::size_t l = 0; l < scales[s].size(); ++l) {
        const std::string b =
            "discriminator.scale" + std::to_string(s) + ".conv" + std::to_string(l) + ".";
        fn(b + "kernel", scales[s][l].kernel);
        fn(b + "bias", scales[s][l].bias);
      }
    }
  }
};

template <typename G>
std::vector<typename G::Value> discriminate_logits(G& g, const typename G::Value& image,
                                                   const typename G::Value& condition,
                                                   const DiscriminatorWeights& w) {
  const Extents& ei = g.extents(image);
  const Extents& ec = g.extents(condition);
  if (ei.height() != ec.height() || ei.width() != ec.width()) {
    fail(ErrorKind::Shape, "discriminate: image " + to_string(ei) + " vs condition " +
                               to_string(ec));
  }
  if (ei.channels() != w.config.image_channels || ec.channels() != w.config.condition_channels) {
    fail(ErrorKind::Shape, "discriminate: channel counts do not match the weights");
  }
  std::vector<typename G::Value> out;
  auto x = g.concat_channels(image, condition);
  for (std::size_t s = 0; s < w.scales.size(); ++s) {
    if (s > 0) x = g.avg_pool2(x);
    const auto& convs = w.scales[s];
    auto h = g.relu(g.conv2d(x, convs.front()));
    for (std::size_t l = 1; l + 1 < convs.size(); ++l) {
      h = g.relu(g.channel_normalize(g.conv2d(h, convs[l]), w.config.epsilon));
    }
    out.push_back(g.conv2d(h, convs.back()));
  }
  return out;
}

/// Per-scale score maps in (0, 1); scale s has extents H/2^s × W/2^s.
std::vector<Tensor> discriminate(const Tensor& image, const Tensor& condition,
                                 const DiscriminatorWeights& weights);

enum class GanVariant { Naive, Retrieval, Bach };
const char* to_string(GanVariant v);
GanVariant parse_gan_variant(std::string_view s);

/// Discriminator outputs for one image source: one score map per scale.
using ScoreMaps = std::vector<Tensor>;

struct LossTerm {
  std::string name;
  double value = 0.0;
};

struct LossReport {
  GanVariant variant = GanVariant::Naive;
  /// Σ of the expectation terms, the value D maximises.
  double discriminator_value = 0.0;
  /// E[log(1 - D(fake))], the value G minimises.
  double generator_value = 0.0;
  std::vector<LossTerm> terms;
};

/// Each expectation is the per-pixel mean of the log term, averaged over
/// scales. `reals` holds one source for naive/bach (ground truth) and two for
/// retrieval (retrieved image, then ground truth).
LossReport gan_objective(GanVariant variant, std::span<const ScoreMaps> reals,
                         const ScoreMaps& fake);
nlohmann::json to_json(const LossReport& report);

// Toy training ----------------------------------------------------------------

enum class TrainMode { Reconstruction, Adversarial };

struct ToyTrainConfig {
  TrainMode mode = TrainMode::Reconstruction;
  std::size_t steps = 500;
  std::uint64_t seed = 1;
  std::size_t size = 16;
  std::size_t retrieved = 2;
  std::size_t fusion_steps = 1;
  std::size_t features = 16;
  double learning_rate = 0.01;
  double beta1 = 0.5;
  double beta2 = 0.999;
  bool verify_gradients = true;
};

struct ToyTrainReport {
  ToyTrainConfig config;
  std::vector<double> losses;               // recon: L1 per step; adv: generator value
  std::vector<double> discriminator_losses; // adv only
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double gradcheck_max_relative_error = 0.0;
  Tensor target;
  Tensor output;
  FusionParams fusion;
  GeneratorWeights generator;
  DiscriminatorWeights discriminator;
};

ToyTrainReport toy_train(const ToyTrainConfig& config);
nlohmann::json to_json(const ToyTrainReport& report);

}  // namespace bachkit
