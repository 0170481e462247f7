#include "bachkit/verify.hpp"

#include <random>

#include "bachkit/fusion.hpp"
#include "bachkit/generator.hpp"

namespace bachkit {

namespace {

constexpr double kEps = 1e-5;
constexpr int kMaxAttempts = 200;

struct Sampler {
  std::mt19937_64 rng;

  Tensor tensor(Extents e, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(e);
    for (auto& v : t.values()) v = u(rng);
    return t;
  }
  ConvParams conv(std::size_t in, std::size_t out, double bound) {
    return ConvParams::uniform(in, out, bound, rng);
  }
};

/// Redraws via `attempt` until the base point clears kReluKinkMargin and has
/// no relu channel that is inactive everywhere.
template <typename Attempt>
GradientCase run_case(std::string name, Attempt attempt) {
  GradientCase c{std::move(name), {}, 0};
  for (int i = 0; i < kMaxAttempts; ++i) {
    ++c.attempts;
    c.result = attempt();
    if (c.result.min_relu_margin >= kReluKinkMargin && c.result.dead_relu_channels == 0) return c;
  }
  fail(ErrorKind::Numeric, "verify_gradients: no kink-free point found for " + c.name);
}

template <typename Module>
void append(Module& m, std::vector<Tensor*>& out) {
  m.for_each_tensor([&](const std::string&, Tensor& t) { out.push_back(&t); });
}

}  // namespace

std::vector<GradientCase> verify_gradients(std::uint64_t seed) {
  Sampler s{std::mt19937_64(seed)};
  std::vector<GradientCase> out;

  out.push_back(run_case("conv2d", [&] {
    Tensor x = s.tensor({1, 5, 4, 3});
    ConvParams p = s.conv(3, 2, 0.5);
    const Tensor w = s.tensor({1, 5, 4, 2});
    auto loss = [&](GradTape& t) { return t.weighted_sum(t.conv2d(t.param(x), p), w); };
    std::vector<Tensor*> params{&x, &p.kernel, &p.bias};
    return grad_check_params(loss, params, kEps);
  }));

  out.push_back(run_case("channel_normalize", [&] {
    const Tensor x = s.tensor({2, 4, 4, 3});
    const Tensor w = s.tensor({2, 4, 4, 3});
    auto f = [&](GradTape& t, GradTape::Var v) {
      return t.weighted_sum(t.channel_normalize(v, kernel::kDefaultNormEpsilon), w);
    };
    return grad_check(f, x, kEps);
  }));

  out.push_back(run_case("spade_layer", [&] {
    Tensor h = s.tensor({1, 4, 4, 3});
    Tensor cond = s.tensor({1, 2, 2, 4});
    SpadeParams p{s.conv(4, 3, 0.5), s.conv(4, 3, 0.5)};
    const Tensor w = s.tensor({1, 4, 4, 3});
    auto loss = [&](GradTape& t) {
      return t.weighted_sum(
          spade_forward(t, t.param(h), t.param(cond), p, kernel::kDefaultNormEpsilon), w);
    };
    std::vector<Tensor*> params{&h, &cond, &p.gamma.kernel, &p.gamma.bias, &p.beta.kernel,
                                &p.beta.bias};
    return grad_check_params(loss, params, kEps);
  }));

  out.push_back(run_case("fusion_block", [&] {
    Tensor q = s.tensor({1, 4, 4, 3}, 0.0, 1.0);
    std::vector<Tensor> r{s.tensor({1, 4, 4, 3}, 0.0, 1.0), s.tensor({1, 4, 4, 3}, 0.0, 1.0)};
    FusionParams p{s.conv(3, 3, 0.5), s.conv(3, 3, 0.5), 2};
    const Tensor w = s.tensor({1, 4, 4, 3});
    auto loss = [&](GradTape& t) {
      std::vector<GradTape::Var> rs;
      for (const Tensor& x : r) rs.push_back(t.param(x));
      return t.weighted_sum(fuse_forward(t, t.param(q), rs, p), w);
    };
    std::vector<Tensor*> params{&q, &r[0], &r[1]};
    append(p, params);
    return grad_check_params(loss, params, kEps);
  }));

  out.push_back(run_case("toy_generator", [&] {
    const Tensor q = s.tensor({1, 8, 8, 3}, 0.0, 1.0);
    const std::vector<Tensor> r{s.tensor({1, 8, 8, 3}, 0.0, 1.0)};
    FusionParams fp{s.conv(3, 3, 0.5), s.conv(3, 3, 0.5), 1};
    GeneratorConfig gc;
    gc.condition_channels = 3;
    gc.features = 3;
    gc.blocks = 2;
    gc.upsampling_blocks = 1;
    GeneratorWeights g = GeneratorWeights::init(gc, s.rng());
    const Tensor w = s.tensor({1, 8, 8, 3});
    auto loss = [&](GradTape& t) {
      std::vector<GradTape::Var> rs;
      for (const Tensor& x : r) rs.push_back(t.input(x));
      auto m = fuse_forward(t, t.input(q), rs, fp);
      return t.weighted_sum(generate_forward(t, m, g), w);
    };
    std::vector<Tensor*> params;
    append(fp, params);
    // conv1 biases are normalized away by the following SPADE layer; their
    // gradient is identically zero.
    g.for_each_tensor([&](const std::string& name, Tensor& t) {
      if (!name.ends_with("conv1.bias")) params.push_back(&t);
    });
    return grad_check_params(loss, params, kEps);
  }));
  return out;
}

nlohmann::json to_json(const std::vector<GradientCase>& cases) {
  nlohmann::json j = nlohmann::json::array();
  for (const GradientCase& c : cases) {
    j.push_back({{"name", c.name},
                 {"max_relative_error", c.result.max_relative_error},
                 {"min_relu_margin", c.result.min_relu_margin},
                 {"dead_relu_channels", c.result.dead_relu_channels},
                 {"coordinates", c.result.coordinates},
                 {"attempts", c.attempts}});
  }
  return j;
}

}  // namespace bachkit
