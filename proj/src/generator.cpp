#include "bachkit/generator.hpp"

#include <cmath>
#include <random>

#include "bachkit/bank.hpp"

namespace bachkit {

Tensor spade_layer(const Tensor& h, const Tensor& condition, const SpadeParams& params,
                   double epsilon) {
  Eval g;
  return spade_forward(g, h, condition, params, epsilon);
}

namespace {

template <typename Rng>
ConvParams scaled_conv(std::size_t in, std::size_t out, Rng& rng) {
  auto p = ConvParams::uniform(in, out, 1.0 / std::sqrt(9.0 * static_cast<double>(in)), rng);
  for (auto& b : p.bias.values()) b = 0.0;
  return p;
}

template <typename Rng>
SpadeParams spade_init(std::size_t condition, std::size_t channels, Rng& rng) {
  SpadeParams p{scaled_conv(condition, channels, rng), scaled_conv(condition, channels, rng)};
  // Start from near-identity modulation.
  for (auto& b : p.gamma.bias.values()) b = 1.0;
  return p;
}

}  // namespace

GeneratorWeights GeneratorWeights::init(const GeneratorConfig& config, std::uint64_t seed) {
  if (config.condition_channels == 0 || config.features == 0) {
    fail(ErrorKind::Parameter, "generator: channel counts must be positive");
  }
  if (config.upsampling_blocks > config.blocks) {
    fail(ErrorKind::Parameter, "generator: more upsampling blocks than blocks");
  }
  std::mt19937_64 rng(seed);
  GeneratorWeights w;
  w.config = config;
  const std::size_t k = config.condition_channels, f = config.features;
  w.input = scaled_conv(k, f, rng);
  for (std::size_t i = 0; i < config.blocks; ++i) {
    SpadeResBlock b;
    b.norm1 = spade_init(k, f, rng);
    b.conv1 = scaled_conv(f, f, rng);
    b.norm2 = spade_init(k, f, rng);
    b.conv2 = scaled_conv(f, f, rng);
    b.upsample = i < config.upsampling_blocks;
    w.blocks.push_back(std::move(b));
  }
  w.output = scaled_conv(f, 3, rng);
  return w;
}

void check_generator(const GeneratorWeights& w, const Extents& condition) {
  const std::size_t div = std::size_t{1} << w.config.upsampling_blocks;
  if (condition.groups() != 1) fail(ErrorKind::Shape, "generate: expected one feature map");
  if (condition.channels() != w.config.condition_channels ||
      w.input.in_channels() != w.config.condition_channels) {
    fail(ErrorKind::Shape, "generate: feature map has " + std::to_string(condition.channels()) +
                               " channels, weights expect " +
                               std::to_string(w.config.condition_channels));
  }
  if (condition.height() % div != 0 || condition.width() % div != 0) {
    fail(ErrorKind::Shape, "generate: extents " + to_string(condition) + " not divisible by " +
                               std::to_string(div));
  }
  std::size_t ups = 0;
  for (const SpadeResBlock& b : w.blocks) ups += b.upsample ? 1 : 0;
  if (ups != w.config.upsampling_blocks || w.blocks.size() != w.config.blocks ||
      w.output.out_channels() != 3) {
    fail(ErrorKind::Shape, "generate: weights inconsistent with configuration");
  }
}

Tensor generate(const Tensor& feature_map, const GeneratorWeights& weights) {
  Eval g;
  return generate_forward(g, feature_map, weights);
}

DiscriminatorWeights DiscriminatorWeights::zeros(const DiscriminatorConfig& config) {
  if (config.layers < 2 || config.scales == 0) {
    fail(ErrorKind::Parameter, "discriminator: needs >= 2 layers and >= 1 scale");
  }
  DiscriminatorWeights w;
  w.config = config;
  const std::size_t in = config.image_channels + config.condition_channels;
  for (std::size_t s = 0; s < config.scales; ++s) {
    std::vector<ConvParams> convs;
    convs.push_back(ConvParams::zeros(in, config.features));
    for (std::size_t l = 1; l + 1 < config.layers; ++l) {
      convs.push_back(ConvParams::zeros(config.features, config.features));
    }
    convs.push_back(ConvParams::zeros(config.features, 1));
    w.scales.push_back(std::move(convs));
  }
  return w;
}

DiscriminatorWeights DiscriminatorWeights::init(const DiscriminatorConfig& config,
                                                std::uint64_t seed) {
  DiscriminatorWeights w = zeros(config);
  std::mt19937_64 rng(seed);
  for (auto& convs : w.scales) {
    for (auto& c : convs) c = scaled_conv(c.in_channels(), c.out_channels(), rng);
  }
  return w;
}

std::vector<Tensor> discriminate(const Tensor& image, const Tensor& condition,
                                 const DiscriminatorWeights& weights) {
  Eval g;
  auto logits = discriminate_logits(g, image, condition, weights);
  for (auto& l : logits) l = kernel::sigmoid(l);
  return logits;
}

const char* to_string(GanVariant v) {
  switch (v) {
    case GanVariant::Naive: return "naive";
    case GanVariant::Retrieval: return "retrieval";
    case GanVariant::Bach: return "bach";
  }
  return "?";
}

GanVariant parse_gan_variant(std::string_view s) {
  if (s == "naive") return GanVariant::Naive;
  if (s == "retrieval") return GanVariant::Retrieval;
  if (s == "bach") return GanVariant::Bach;
  fail(ErrorKind::Parameter, "unknown GAN variant '" + std::string(s) + "'");
}

namespace {

/// Mean over scales of the per-pixel mean of log(d) (or log(1 - d)).
double expectation(const ScoreMaps& maps, bool complement, const char* what) {
  if (maps.empty()) fail(ErrorKind::Parameter, std::string("gan_objective: no score maps for ") + what);
  double total = 0.0;
  for (const Tensor& m : maps) {
    if (m.empty()) fail(ErrorKind::Parameter, "gan_objective: empty score map");
    double s = 0.0;
    for (double d : m.values()) {
      if (!(d > 0.0 && d < 1.0)) {
        fail(ErrorKind::Numeric, std::string("gan_objective: score outside (0, 1) in ") + what);
      }
      s += complement ? std::log1p(-d) : std::log(d);
    }
    total += s / static_cast<double>(m.size());
  }
  return total / static_cast<double>(maps.size());
}

}  // namespace

LossReport gan_objective(GanVariant variant, std::span<const ScoreMaps> reals,
                         const ScoreMaps& fake) {
  const std::size_t expected = variant == GanVariant::Retrieval ? 2 : 1;
  if (reals.size() != expected) {
    fail(ErrorKind::Parameter, std::string("gan_objective: variant ") + to_string(variant) +
                                   " takes " + std::to_string(expected) + " real input(s)");
  }
  LossReport r;
  r.variant = variant;
  if (variant == GanVariant::Retrieval) {
    r.terms.push_back({"log D(M, I_r)", expectation(reals[0], false, "retrieved image")});
    r.terms.push_back({"log D(M, I_q)", expectation(reals[1], false, "ground truth")});
  } else {
    r.terms.push_back({variant == GanVariant::Naive ? "log D(M, I)" : "log D(m, I_q)",
                       expectation(reals[0], false, "real image")});
  }
  r.generator_value = expectation(fake, true, "generated image");
  r.terms.push_back({"log(1 - D(G))", r.generator_value});
  for (const LossTerm& t : r.terms) r.discriminator_value += t.value;
  return r;
}

nlohmann::json to_json(const LossReport& report) {
  nlohmann::json terms = nlohmann::json::array();
  for (const LossTerm& t : report.terms) terms.push_back({{"name", t.name}, {"value", t.value}});
  return {{"variant", to_string(report.variant)},
          {"discriminator_value", report.discriminator_value},
          {"generator_value", report.generator_value},
          {"terms", terms}};
}

// Toy training ----------------------------------------------------------------

namespace {

class Adam {
 public:
  Adam(std::vector<Tensor*> params, double lr, double beta1, double beta2)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2) {
    for (Tensor* p : params_) {
      m_.emplace_back(p->extents());
      v_.emplace_back(p->extents());
    }
  }

  std::span<Tensor* const> params() const { return params_; }

  void step(const GradTape& tape) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      const Tensor* g = tape.grad_of(*params_[k]);
      if (g == nullptr) continue;
      Tensor& p = *params_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * (*g)[i];
        v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * (*g)[i] * (*g)[i];
        p[i] -= lr_ * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + 1e-8);
      }
    }
  }

 private:
  std::vector<Tensor*> params_;
  std::vector<Tensor> m_, v_;
  double lr_, beta1_, beta2_;
  std::size_t t_ = 0;
};

template <typename P>
void collect(P& module, std::vector<Tensor*>& out) {
  module.for_each_tensor([&](const std::string&, Tensor& t) { out.push_back(&t); });
}

struct ToyData {
  Tensor query;
  std::vector<Tensor> retrieved;
  Tensor target;
};

Taxonomy toy_taxonomy() {
  return Taxonomy("toy", {{1, "obj_a"}, {2, "obj_b"}}, {{3, "sky"}, {4, "ground"}});
}

ToyData make_toy_data(const ToyTrainConfig& cfg, std::mt19937_64& rng) {
  const Taxonomy tax = toy_taxonomy();
  const int S = static_cast<int>(cfg.size);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  SalientLayout layout{Canvas{S, S}, {}};
  layout.boxes.push_back({pick(0, S / 4), pick(S / 4, S / 2), S / 2, S / 3, 1});
  layout.boxes.push_back({pick(S / 2, S - S / 3), pick(S / 8, S / 2), S / 3, S / 3, 2});
  const LabelMap fg = rasterize_layout(layout, tax);

  ToyData d;
  d.query = pad_query(fg, tax.background_count()).to_tensor();
  for (std::size_t i = 0; i < cfg.retrieved; ++i) {
    ClassMap seg{cfg.size, cfg.size, std::vector<std::uint8_t>(cfg.size * cfg.size)};
    const int horizon = S / 2 + pick(-2, 2);
    for (int y = 0; y < S; ++y) {
      for (int x = 0; x < S; ++x) {
        seg.ids[static_cast<std::size_t>(y * S + x)] = y < horizon ? 3 : 4;
      }
    }
    const int bx = pick(0, S - 4), by = pick(0, S - 4);
    for (int y = by; y < by + 4; ++y) {
      for (int x = bx; x < bx + 4; ++x) seg.ids[static_cast<std::size_t>(y * S + x)] = 1;
    }
    d.retrieved.push_back(compose_label_map(split_background(seg, tax), fg).to_tensor());
  }

  d.target = Tensor::image(cfg.size, cfg.size, 3);
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const double shade = 0.3 * (static_cast<double>(y) / S - 0.5);
      std::array<double, 3> rgb = y < S / 2 ? std::array<double, 3>{-0.6, -0.2, 0.8}
                                            : std::array<double, 3>{-0.4, 0.5, -0.5};
      if (fg.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), 0) > 0) rgb = {0.8, -0.5, -0.5};
      if (fg.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), 1) > 0) rgb = {0.7, 0.7, -0.6};
      for (std::size_t c = 0; c < 3; ++c) {
        d.target.at(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) =
            std::clamp(rgb[c] + shade, -0.9, 0.9);
      }
    }
  }
  return d;
}

/// Grad-checks a randomly drawn SPADE -> relu -> conv subnetwork, redrawing
/// points that sit within kReluKinkMargin of a relu kink.
double verify_subnetwork(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto rand_tensor = [&](Extents e) {
    Tensor t(e);
    for (auto& v : t.values()) v = u(rng);
    return t;
  };
  for (int attempt = 0; attempt < 50; ++attempt) {
    Tensor h = rand_tensor({1, 4, 4, 2});
    Tensor cond = rand_tensor({1, 4, 4, 3});
    SpadeParams sp{ConvParams::uniform(3, 2, 0.5, rng), ConvParams::uniform(3, 2, 0.5, rng)};
    ConvParams conv = ConvParams::uniform(2, 2, 0.5, rng);
    Tensor readout = rand_tensor({1, 4, 4, 2});
    auto loss = [&](GradTape& t) {
      auto x = t.param(h);
      auto y = spade_forward(t, x, t.input(cond), sp, kernel::kDefaultNormEpsilon);
      return t.weighted_sum(t.conv2d(t.relu(y), conv), readout);
    };
    std::vector<Tensor*> params{&h, &sp.gamma.kernel, &sp.gamma.bias, &sp.beta.kernel,
                                &sp.beta.bias, &conv.kernel, &conv.bias};
    const auto r = grad_check_params(loss, params, 1e-5);
    if (r.min_relu_margin < kReluKinkMargin) continue;
    return r.max_relative_error;
  }
  fail(ErrorKind::Training, "gradient verification could not find a kink-free point");
}

GradTape::Var log_likelihood(GradTape& t, const std::vector<GradTape::Var>& logits,
                             bool complement) {
  auto total = t.mean(t.log_sigmoid(logits.front(), complement));
  for (std::size_t s = 1; s < logits.size(); ++s) {
    total = t.add(total, t.mean(t.log_sigmoid(logits[s], complement)));
  }
  return t.scale(total, 1.0 / static_cast<double>(logits.size()));
}

void require_finite_loss(double v, std::size_t step) {
  if (!std::isfinite(v)) {
    fail(ErrorKind::Training, "training diverged: non-finite loss at step " + std::to_string(step));
  }
}

}  // namespace

ToyTrainReport toy_train(const ToyTrainConfig& cfg) {
  if (cfg.size < 4 || cfg.size > 32 || cfg.size % 2 != 0) {
    fail(ErrorKind::Parameter, "toy_train: size must be even and within [4, 32]");
  }
  if (cfg.retrieved == 0) fail(ErrorKind::Parameter, "toy_train: retrieved must be >= 1");
  std::mt19937_64 rng(cfg.seed);
  ToyTrainReport rep;
  rep.config = cfg;
  if (cfg.verify_gradients) {
    rep.gradcheck_max_relative_error = verify_subnetwork(rng);
    if (!(rep.gradcheck_max_relative_error < 1e-4)) {
      fail(ErrorKind::Training, "gradient verification failed: max relative error " +
                                    std::to_string(rep.gradcheck_max_relative_error));
    }
  }
  const ToyData data = make_toy_data(cfg, rng);
  const std::size_t k = data.query.extents().channels();
  rep.target = data.target;
  rep.fusion = FusionParams::init(k, rng(), cfg.fusion_steps);
  GeneratorConfig gc;
  gc.condition_channels = k;
  gc.features = cfg.features;
  rep.generator = GeneratorWeights::init(gc, rng());
  DiscriminatorConfig dc;
  dc.condition_channels = k;
  dc.features = cfg.features;
  rep.discriminator = DiscriminatorWeights::init(dc, rng());

  std::vector<Tensor*> gen_params;
  collect(rep.fusion, gen_params);
  collect(rep.generator, gen_params);
  Adam gen_opt(gen_params, cfg.learning_rate, cfg.beta1, cfg.beta2);
  std::vector<Tensor*> disc_params;
  collect(rep.discriminator, disc_params);
  Adam disc_opt(disc_params, cfg.learning_rate, cfg.beta1, cfg.beta2);

  auto pipeline = [&](auto& g) {
    std::vector<typename std::decay_t<decltype(g)>::Value> r;
    for (const Tensor& t : data.retrieved) r.push_back(g.input(t));
    auto fused = fuse_forward(g, g.input(data.query), r, rep.fusion);
    auto image = generate_forward(g, fused, rep.generator);
    return std::pair{fused, image};
  };

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (cfg.mode == TrainMode::Reconstruction) {
      GradTape t;
      auto [fused, image] = pipeline(t);
      auto loss = t.l1_mean(image, data.target);
      const double v = t.scalar(loss);
      require_finite_loss(v, step);
      rep.losses.push_back(v);
      t.backward(loss);
      gen_opt.step(t);
      continue;
    }
    // Discriminator ascent on E[log D(m, I_q)] + E[log(1 - D(m, G(m)))].
    Eval e;
    auto [fused_e, fake_e] = pipeline(e);
    {
      GradTape t;
      auto fused = t.input(fused_e);
      auto real = log_likelihood(t, discriminate_logits(t, t.input(data.target), fused, rep.discriminator), false);
      auto fake = log_likelihood(t, discriminate_logits(t, t.input(fake_e), fused, rep.discriminator), true);
      auto value = t.add(real, fake);
      const double v = t.scalar(value);
      require_finite_loss(v, step);
      rep.discriminator_losses.push_back(v);
      auto loss = t.scale(value, -1.0);
      t.backward(loss);
      disc_opt.step(t);
    }
    // Generator descent on E[log(1 - D(m, G(m)))].
    {
      GradTape t;
      auto [fused, image] = pipeline(t);
      auto value = log_likelihood(t, discriminate_logits(t, image, fused, rep.discriminator), true);
      const double v = t.scalar(value);
      require_finite_loss(v, step);
      rep.losses.push_back(v);
      t.backward(value);
      gen_opt.step(t);
    }
  }

  Eval e;
  auto [fused, image] = pipeline(e);
  rep.output = image;
  if (cfg.mode == TrainMode::Reconstruction) {
    double s = 0.0;
    for (std::size_t i = 0; i < image.size(); ++i) s += std::abs(image[i] - data.target[i]);
    rep.final_loss = s / static_cast<double>(image.size());
  } else {
    rep.final_loss = rep.losses.empty() ? 0.0 : rep.losses.back();
  }
  rep.initial_loss = rep.losses.empty() ? rep.final_loss : rep.losses.front();
  return rep;
}

nlohmann::json to_json(const ToyTrainReport& r) {
  return {{"mode", r.config.mode == TrainMode::Reconstruction ? "recon" : "adv"},
          {"steps", r.config.steps},
          {"seed", r.config.seed},
          {"size", r.config.size},
          {"learning_rate", r.config.learning_rate},
          {"initial_loss", r.initial_loss},
          {"final_loss", r.final_loss},
          {"gradcheck_max_relative_error", r.gradcheck_max_relative_error},
          {"losses", r.losses},
          {"discriminator_values", r.discriminator_losses}};
}

}  // namespace bachkit
