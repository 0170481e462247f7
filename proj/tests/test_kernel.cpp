#include <doctest.h>

#include <filesystem>
#include <random>

#include "bachkit/autodiff.hpp"
#include "bachkit/kernel.hpp"
#include "oracles.hpp"

using namespace bachkit;

TEST_CASE("conv2d matches the direct convolution sum") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = oracle::random_tensor({2, 5, 7, 3}, rng);
    const ConvParams p = ConvParams::uniform(3, 4, 1.0, rng);
    const Tensor got = kernel::conv2d(x, p);
    CHECK(got.extents() == Extents{2, 5, 7, 4});
    CHECK(max_abs_diff(got, oracle::conv(x, p.kernel, p.bias)) < 1e-12);
  }
}

TEST_CASE("conv2d is linear without bias") {
  std::mt19937_64 rng(2);
  const Tensor a = oracle::random_tensor({1, 6, 6, 2}, rng), b = oracle::random_tensor({1, 6, 6, 2}, rng);
  ConvParams p = ConvParams::uniform(2, 3, 1.0, rng);
  for (auto& v : p.bias.values()) v = 0;
  Tensor mix(a.extents());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 2.5 * a[i] - 0.75 * b[i];
  const Tensor lhs = kernel::conv2d(mix, p);
  const Tensor ca = kernel::conv2d(a, p), cb = kernel::conv2d(b, p);
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    const double rhs = 2.5 * ca[i] - 0.75 * cb[i];
    CHECK(std::abs(lhs[i] - rhs) <= 1e-10 * std::max(1.0, std::abs(rhs)));
  }
}

TEST_CASE("conv2d is translation covariant on interior pixels") {
  std::mt19937_64 rng(3);
  const Tensor x = oracle::random_tensor({1, 8, 8, 2}, rng);
  const ConvParams p = ConvParams::uniform(2, 2, 1.0, rng);
  Tensor shifted(x.extents());
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t xx = 1; xx < 8; ++xx)
      for (std::size_t c = 0; c < 2; ++c) shifted.at(0, y, xx, c) = x.at(0, y, xx - 1, c);
  const Tensor a = kernel::conv2d(x, p), b = kernel::conv2d(shifted, p);
  for (std::size_t y = 1; y < 7; ++y)
    for (std::size_t xx = 2; xx < 7; ++xx)
      for (std::size_t c = 0; c < 2; ++c) CHECK(b.at(0, y, xx, c) == doctest::Approx(a.at(0, y, xx - 1, c)).epsilon(1e-12));
}

TEST_CASE("conv2d rejects mismatched channels and bad kernels") {
  const Tensor x = Tensor::image(4, 4, 3);
  CHECK_THROWS_AS(kernel::conv2d(x, ConvParams::zeros(2, 2)), Error);
  ConvParams bad = ConvParams::zeros(3, 2);
  bad.bias = Tensor({1, 1, 1, 3});
  CHECK_THROWS_AS(kernel::conv2d(x, bad), Error);
  try {
    kernel::conv2d(x, ConvParams::zeros(2, 2));
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Shape);
  }
}

TEST_CASE("identity conv passes the input through") {
  std::mt19937_64 rng(4);
  const Tensor x = oracle::random_tensor({1, 4, 5, 3}, rng);
  CHECK(kernel::conv2d(x, ConvParams::identity(3)) == x);
}

TEST_CASE("channel_normalize statistics") {
  std::mt19937_64 rng(5);
  const Tensor x = oracle::random_tensor({2, 6, 5, 3}, rng, -3, 7);
  const auto n = kernel::channel_normalize(x);
  CHECK(max_abs_diff(n.output, oracle::normalize(x, kernel::kDefaultNormEpsilon)) < 1e-12);
  const std::size_t P = 30;
  for (std::size_t g = 0; g < 2; ++g)
    for (std::size_t c = 0; c < 3; ++c) {
      double mu = 0, var = 0;
      for (std::size_t p = 0; p < P; ++p) mu += n.output[(g * P + p) * 3 + c];
      mu /= P;
      for (std::size_t p = 0; p < P; ++p) var += std::pow(n.output[(g * P + p) * 3 + c] - mu, 2);
      var /= P;
      CHECK(std::abs(mu) < 1e-10);
      CHECK(var <= 1.0);
      CHECK(var > 1.0 - 1e-4);
    }
}

TEST_CASE("channel_normalize degenerate and symmetric channels") {
  for (double c : {-10.0, 0.0, 3.0, 10.0}) {
    const Tensor x = Tensor::image(3, 3, 1, c);
    const auto n = kernel::channel_normalize(x);
    for (double v : n.output.values()) CHECK(std::abs(v) < 1e-2);
  }
  Tensor pm = Tensor::image(1, 2, 1);
  pm[0] = -1;
  pm[1] = 1;
  const auto n = kernel::channel_normalize(pm);
  CHECK(n.output[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(n.output[1] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("nearest_upsample then subsample recovers the input") {
  std::mt19937_64 rng(6);
  const Tensor x = oracle::random_tensor({1, 3, 4, 2}, rng);
  for (std::size_t f : {1u, 2u, 3u}) {
    const Tensor up = kernel::nearest_upsample(x, f);
    CHECK(up.extents() == Extents{1, 3 * f, 4 * f, 2});
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t xx = 0; xx < 4; ++xx)
        for (std::size_t c = 0; c < 2; ++c) CHECK(up.at(0, y * f, xx * f, c) == x.at(0, y, xx, c));
  }
  CHECK_THROWS_AS(kernel::nearest_upsample(x, 0), Error);
}

TEST_CASE("avg_pool2 averages 2x2 blocks") {
  std::mt19937_64 rng(7);
  const Tensor x = oracle::random_tensor({1, 4, 6, 2}, rng);
  const Tensor p = kernel::avg_pool2(x);
  CHECK(p.extents() == Extents{1, 2, 3, 2});
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t xx = 0; xx < 3; ++xx)
      for (std::size_t c = 0; c < 2; ++c) {
        const double want = (x.at(0, 2 * y, 2 * xx, c) + x.at(0, 2 * y + 1, 2 * xx, c) +
                             x.at(0, 2 * y, 2 * xx + 1, c) + x.at(0, 2 * y + 1, 2 * xx + 1, c)) / 4;
        CHECK(p.at(0, y, xx, c) == doctest::Approx(want).epsilon(1e-14));
      }
  CHECK_THROWS_AS(kernel::avg_pool2(Tensor::image(3, 4, 1)), Error);
}

TEST_CASE("group_mean is permutation invariant") {
  std::mt19937_64 rng(8);
  std::vector<Tensor> xs;
  for (int i = 0; i < 4; ++i) xs.push_back(oracle::random_tensor({1, 3, 3, 2}, rng));
  const Tensor a = kernel::group_mean(stack_groups(xs));
  std::swap(xs[0], xs[3]);
  std::swap(xs[1], xs[2]);
  const Tensor b = kernel::group_mean(stack_groups(xs));
  CHECK(a == b);
}

TEST_CASE("tensor dump round trip and rejection of truncated dumps") {
  std::mt19937_64 rng(9);
  const Tensor x = oracle::random_tensor({2, 3, 4, 5}, rng);
  const auto bytes = encode_tensor(x);
  CHECK(bytes.size() == 32 + 8 * x.size());
  CHECK(decode_tensor(bytes) == x);
  const auto path = std::filesystem::temp_directory_path() / "bachkit_tensor_test.bin";
  save_tensor(path, x);
  CHECK(load_tensor(path) == x);
  std::filesystem::remove(path);
  std::vector<unsigned char> cut(bytes.begin(), bytes.end() - 3);
  CHECK_THROWS_AS(decode_tensor(cut), Error);
}

TEST_CASE("float path agrees with double forward") {
  std::mt19937_64 rng(10);
  const Tensor x = oracle::random_tensor({1, 4, 4, 2}, rng);
  const ConvParams p = ConvParams::uniform(2, 3, 1.0, rng);
  TensorF xf(x.extents());
  for (std::size_t i = 0; i < x.size(); ++i) xf[i] = static_cast<float>(x[i]);
  kernel::BasicConvParams<float> pf = kernel::BasicConvParams<float>::zeros(2, 3);
  for (std::size_t i = 0; i < p.kernel.size(); ++i) pf.kernel[i] = static_cast<float>(p.kernel[i]);
  for (std::size_t i = 0; i < p.bias.size(); ++i) pf.bias[i] = static_cast<float>(p.bias[i]);
  const Tensor want = kernel::conv2d(x, p);
  const TensorF got = kernel::conv2d(xf, pf);
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-5);
}

TEST_CASE("grad_check on linear sum is exact") {
  std::mt19937_64 rng(11);
  const Tensor x = oracle::random_tensor({1, 3, 3, 2}, rng);
  const auto r = grad_check([](GradTape& t, GradTape::Var v) { return t.sum(v); }, x, 1e-5);
  CHECK(r.max_relative_error < 1e-10);
  CHECK_THROWS_AS(grad_check([](GradTape& t, GradTape::Var v) { return t.sum(v); }, x, 1e-2), Error);
  CHECK_THROWS_AS(grad_check([](GradTape& t, GradTape::Var v) { return t.sum(v); }, x, 1e-8), Error);
}

TEST_CASE("grad_check conv -> relu -> sum away from kinks") {
  std::mt19937_64 rng(12);
  for (int attempt = 0; attempt < 50; ++attempt) {
    const Tensor x = oracle::random_tensor({1, 4, 4, 2}, rng);
    const ConvParams p = ConvParams::uniform(2, 3, 1.0, rng);
    const auto r = grad_check([&](GradTape& t, GradTape::Var v) { return t.sum(t.relu(t.conv2d(v, p))); }, x, 1e-5);
    if (r.min_relu_margin < kReluKinkMargin) continue;
    CHECK(r.max_relative_error < 1e-4);
    return;
  }
  FAIL("no kink-free point");
}

TEST_CASE("backward passes agree with finite differences per op") {
  std::mt19937_64 rng(13);
  const Tensor w4 = oracle::random_tensor({1, 4, 4, 2}, rng);
  const Tensor w2 = oracle::random_tensor({1, 2, 2, 2}, rng);
  const Tensor w8 = oracle::random_tensor({1, 8, 8, 2}, rng);
  const Tensor x = oracle::random_tensor({1, 4, 4, 2}, rng);
  auto check = [&](auto f) { CHECK(grad_check(f, x, 1e-5).max_relative_error < 1e-4); };
  check([&](GradTape& t, GradTape::Var v) { return t.weighted_sum(t.tanh(v), w4); });
  check([&](GradTape& t, GradTape::Var v) { return t.weighted_sum(t.sigmoid(v), w4); });
  check([&](GradTape& t, GradTape::Var v) { return t.weighted_sum(t.mul(v, t.tanh(v)), w4); });
  check([&](GradTape& t, GradTape::Var v) { return t.weighted_sum(t.avg_pool2(v), w2); });
  check([&](GradTape& t, GradTape::Var v) { return t.weighted_sum(t.nearest_resize(v, 8, 8), w8); });
  check([&](GradTape& t, GradTape::Var v) { return t.weighted_sum(t.nearest_resize(v, 2, 2), w2); });
  check([&](GradTape& t, GradTape::Var v) { return t.weighted_sum(t.channel_normalize(v, 1e-5), w4); });
  check([&](GradTape& t, GradTape::Var v) { return t.mean(t.log_sigmoid(v, true)); });
  check([&](GradTape& t, GradTape::Var v) { return t.mean(t.log_sigmoid(v, false)); });
}
