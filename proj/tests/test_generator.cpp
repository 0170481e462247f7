#include <doctest.h>

#include <filesystem>
#include <random>
#include <thread>

#include "bachkit/generator.hpp"
#include "bachkit/params.hpp"
#include "oracles.hpp"

using namespace bachkit;

namespace {

SpadeParams identity_modulation(std::size_t cond, std::size_t channels) {
  SpadeParams p{ConvParams::zeros(cond, channels), ConvParams::zeros(cond, channels)};
  for (auto& b : p.gamma.bias.values()) b = 1.0;
  return p;
}

ScoreMaps constant_maps(double v) { return {Tensor::image(8, 8, 1, v), Tensor::image(4, 4, 1, v)}; }

}  // namespace

TEST_CASE("spade with unit gamma and zero beta is the normalisation") {
  std::mt19937_64 rng(61);
  const Tensor h = oracle::random_tensor({1, 8, 8, 4}, rng, -3, 5);
  const Tensor cond = oracle::random_tensor({1, 4, 4, 6}, rng);
  const Tensor out = spade_layer(h, cond, identity_modulation(6, 4));
  CHECK(max_abs_diff(out, oracle::normalize(h, kernel::kDefaultNormEpsilon)) < 1e-12);
  for (std::size_t c = 0; c < 4; ++c) {
    double mean = 0, var = 0;
    for (std::size_t p = 0; p < 64; ++p) mean += out[p * 4 + c];
    mean /= 64;
    for (std::size_t p = 0; p < 64; ++p) var += (out[p * 4 + c] - mean) * (out[p * 4 + c] - mean);
    var /= 64;
    CHECK(std::abs(mean) < 1e-10);
    CHECK(std::abs(var - 1) < 1e-3);
  }
  CHECK_THROWS_AS(spade_layer(h, cond, identity_modulation(6, 3)), Error);
  CHECK_THROWS_AS(spade_layer(h, oracle::random_tensor({1, 3, 3, 6}, rng), identity_modulation(6, 4)), Error);
}

TEST_CASE("spade modulation follows the condition") {
  std::mt19937_64 rng(62);
  const Tensor h = oracle::random_tensor({1, 4, 4, 2}, rng);
  const Tensor cond = oracle::random_tensor({1, 4, 4, 3}, rng);
  SpadeParams p{ConvParams::uniform(3, 2, 0.3, rng), ConvParams::uniform(3, 2, 0.3, rng)};
  const Tensor want = oracle::plus(
      [&] {
        Tensor n = oracle::normalize(h, kernel::kDefaultNormEpsilon);
        const Tensor g = oracle::conv(cond, p.gamma.kernel, p.gamma.bias);
        for (std::size_t i = 0; i < n.size(); ++i) n[i] *= g[i];
        return n;
      }(),
      oracle::conv(cond, p.beta.kernel, p.beta.bias));
  CHECK(max_abs_diff(spade_layer(h, cond, p), want) < 1e-12);
}

TEST_CASE("generator output shape, range and determinism") {
  std::mt19937_64 rng(63);
  const GeneratorWeights w = GeneratorWeights::init({5, 8, 3, 2}, 9);
  const Tensor m = oracle::random_tensor({1, 16, 24, 5}, rng, 0, 2);
  const Tensor a = generate(m, w);
  CHECK(a.extents() == Extents{1, 16, 24, 3});
  for (double v : a.values()) CHECK(std::abs(v) < 1.0);
  CHECK(generate(m, w) == a);
  std::vector<Tensor> outs(4);
  std::vector<std::thread> ts;
  for (auto& o : outs) ts.emplace_back([&] { o = generate(m, w); });
  for (auto& t : ts) t.join();
  for (const auto& o : outs) CHECK(o == a);
  CHECK_THROWS_AS(generate(oracle::random_tensor({1, 10, 24, 5}, rng), w), Error);
  CHECK_THROWS_AS(generate(oracle::random_tensor({1, 16, 24, 4}, rng), w), Error);
}

TEST_CASE("discriminator scales and determinism") {
  std::mt19937_64 rng(64);
  const DiscriminatorWeights d = DiscriminatorWeights::init({3, 5, 8, 2, 3}, 4);
  const Tensor img = oracle::random_tensor({1, 8, 12, 3}, rng);
  const Tensor cond = oracle::random_tensor({1, 8, 12, 5}, rng);
  const auto s = discriminate(img, cond, d);
  REQUIRE(s.size() == 2);
  CHECK(s[0].extents() == Extents{1, 8, 12, 1});
  CHECK(s[1].extents() == Extents{1, 4, 6, 1});
  for (const auto& t : s)
    for (double v : t.values()) CHECK((v > 0 && v < 1));
  CHECK(discriminate(img, cond, d) == s);
  const auto zero = discriminate(img, cond, DiscriminatorWeights::zeros({3, 5, 8, 2, 3}));
  for (const auto& t : zero)
    for (double v : t.values()) CHECK(v == 0.5);
  CHECK_THROWS_AS(discriminate(img, oracle::random_tensor({1, 8, 10, 5}, rng), d), Error);
}

TEST_CASE("gan objective reproduces the analytic values") {
  const std::vector<ScoreMaps> one{constant_maps(0.5)};
  const std::vector<ScoreMaps> two{constant_maps(0.5), constant_maps(0.5)};
  CHECK(std::abs(gan_objective(GanVariant::Naive, one, constant_maps(0.5)).discriminator_value + 1.3863) < 1e-4);
  CHECK(std::abs(gan_objective(GanVariant::Retrieval, two, constant_maps(0.5)).discriminator_value + 2.0794) < 1e-4);
  CHECK(std::abs(gan_objective(GanVariant::Bach, one, constant_maps(0.5)).discriminator_value + 1.3863) < 1e-4);
}

TEST_CASE("gan objective matches direct summation") {
  std::mt19937_64 rng(65);
  for (int trial = 0; trial < 20; ++trial) {
    auto maps = [&] {
      return ScoreMaps{oracle::random_tensor({1, 6, 8, 1}, rng, 0.01, 0.99),
                       oracle::random_tensor({1, 3, 4, 1}, rng, 0.01, 0.99)};
    };
    const ScoreMaps r1 = maps(), r2 = maps(), f = maps();
    const std::vector<ScoreMaps> reals{r1, r2};
    const LossReport rep = gan_objective(GanVariant::Retrieval, reals, f);
    const double want = oracle::expectation(r1, false) + oracle::expectation(r2, false) + oracle::expectation(f, true);
    CHECK(std::abs(rep.discriminator_value - want) < 1e-10);
    CHECK(std::abs(rep.generator_value - oracle::expectation(f, true)) < 1e-10);
  }
}

TEST_CASE("gan objective errors") {
  const std::vector<ScoreMaps> one{constant_maps(0.5)};
  const std::vector<ScoreMaps> bad{constant_maps(1.0)};
  auto kind = [](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;
  };
  CHECK(kind([&] { gan_objective(GanVariant::Naive, bad, constant_maps(0.5)); }) == ErrorKind::Numeric);
  CHECK(kind([&] { gan_objective(GanVariant::Naive, one, constant_maps(0.0)); }) == ErrorKind::Numeric);
  CHECK(kind([&] { gan_objective(GanVariant::Retrieval, one, constant_maps(0.5)); }) == ErrorKind::Parameter);
  CHECK(parse_gan_variant("bach") == GanVariant::Bach);
  CHECK(kind([] { parse_gan_variant("wgan"); }) == ErrorKind::Parameter);
}

TEST_CASE("parameter bundles round trip through disk") {
  const auto dir = std::filesystem::temp_directory_path() / "bachkit_params_test";
  std::filesystem::remove_all(dir);
  const ParamBundle b = init_params(7, 3, 2);
  save_params(dir, b);
  const ParamBundle back = load_params(dir);
  REQUIRE(back.fusion);
  REQUIRE(back.generator);
  REQUIRE(back.discriminator);
  CHECK(back.fusion->steps == 2);
  CHECK(back.fusion->encoder == b.fusion->encoder);
  CHECK(back.fusion->refiner == b.fusion->refiner);
  std::mt19937_64 rng(66);
  const Tensor m = oracle::random_tensor({1, 8, 8, 7}, rng);
  CHECK(generate(m, *back.generator) == generate(m, *b.generator));
  const Tensor img = oracle::random_tensor({1, 8, 8, 3}, rng);
  CHECK(discriminate(img, m, *back.discriminator) == discriminate(img, m, *b.discriminator));
  std::filesystem::remove(dir / "fusion.encoder.kernel.bin");
  CHECK_THROWS_AS(load_params(dir), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("short toy training runs are reproducible") {
  ToyTrainConfig c;
  c.steps = 15;
  c.verify_gradients = false;
  const ToyTrainReport a = toy_train(c), b = toy_train(c);
  CHECK(a.losses == b.losses);
  CHECK(a.output == b.output);
  CHECK(a.final_loss < a.initial_loss);
  c.mode = TrainMode::Adversarial;
  c.steps = 3;
  const ToyTrainReport x = toy_train(c), y = toy_train(c);
  CHECK(x.losses == y.losses);
  CHECK(x.discriminator_losses == y.discriminator_losses);
  CHECK(x.discriminator_losses.size() == 3);
}
