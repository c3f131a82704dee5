#include <doctest.h>

#include <cmath>
#include <functional>

#include "nn_fixtures.hpp"
#include "sigmap/error.hpp"
#include "sigmap/random.hpp"
#include "sigmap/synth.hpp"
#include "sigmap/unet.hpp"

using namespace sigmap;
using namespace sigmap::nn;

using namespace sigmap::testing;

TEST_CASE("conv2d examples") {
  auto x = TD::from({1, 1, 4, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
  TD w({1, 1, 3, 3}, 0.0);
  w.data()[4] = 1.0;
  CHECK(conv2d(x, w, TD(), 1).data() == x.data());

  TD c({1, 1, 5, 5}, 2.5);
  TD ones({1, 1, 3, 3}, 1.0);
  TD bias({1}, 0.0);
  const auto y = conv2d(c, ones, bias, 1);
  CHECK(y.data()[2 * 5 + 2] == doctest::Approx(9 * 2.5));
  CHECK(y.data()[0] == doctest::Approx(4 * 2.5));
  CHECK(y.shape() == Shape{1, 1, 5, 5});

  CHECK_THROWS_AS(conv2d(TD({1, 2, 4, 4}), ones, bias, 1), ConfigError);
  CHECK_THROWS_AS(conv2d(c, ones, TD({2}), 1), ConfigError);
}

TEST_CASE("conv2d gradients") {
  Rng rng(1);
  auto x = random_tensor({2, 3, 5, 5}, rng);
  auto w = random_tensor({4, 3, 3, 3}, rng);
  auto b = random_tensor({4}, rng);
  const auto probe = random_weights(2 * 4 * 25, rng);
  const double err = fd_relative_error([&] { return weighted_sum(conv2d(x, w, b, 1), probe); }, {x, w, b});
  MESSAGE("conv2d 3x3 rel err " << err);
  CHECK(err < 1e-6);

  auto w1 = random_tensor({2, 3, 1, 1}, rng);
  const auto probe1 = random_weights(2 * 2 * 25, rng);
  CHECK(fd_relative_error([&] { return weighted_sum(conv2d(x, w1, TD(), 0), probe1); }, {x, w1}) < 1e-6);
}

TEST_CASE("max_pool2") {
  auto x = TD::from({1, 1, 2, 2}, {1, 2, 3, 4}, true);
  auto y = max_pool2(x);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == 4.0);

  auto flat = TD::from({1, 1, 2, 2}, {7, 7, 7, 7}, true);
  auto p = max_pool2(flat);
  CHECK(p.item() == 7.0);
  weighted_sum(p, {1.0}).backward();
  CHECK(flat.grad() == std::vector<double>{1, 0, 0, 0});

  CHECK_THROWS_AS(max_pool2(TD({1, 1, 3, 4})), ConfigError);

  Rng rng(2);
  auto r = random_tensor({2, 3, 6, 4}, rng);
  const auto probe = random_weights(2 * 3 * 3 * 2, rng);
  CHECK(fd_relative_error([&] { return weighted_sum(max_pool2(r), probe); }, {r}) < 1e-6);
}

TEST_CASE("conv_transpose2") {
  auto x = TD::from({1, 1, 1, 1}, {3.0});
  auto w = TD::from({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = conv_transpose2(x, w, TD());
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.data() == std::vector<double>{3, 6, 9, 12});

  Rng rng(3);
  auto xi = random_tensor({2, 3, 4, 5}, rng);
  auto wi = random_tensor({3, 2, 2, 2}, rng);
  auto bi = random_tensor({2}, rng);
  CHECK(conv_transpose2(xi, wi, bi).shape() == Shape{2, 2, 8, 10});
  const auto probe = random_weights(2 * 2 * 80, rng);
  CHECK(fd_relative_error([&] { return weighted_sum(conv_transpose2(xi, wi, bi), probe); }, {xi, wi, bi}) < 1e-6);
  CHECK_THROWS_AS(conv_transpose2(random_tensor({1, 2, 4, 4}, rng), wi, bi), ConfigError);
}

TEST_CASE("batch_norm2d") {
  Rng rng(4);
  auto x = random_tensor({4, 3, 5, 5}, rng, true, -3, 7);
  TD gamma({3}, 1.0, true), beta({3}, 0.0, true);
  BatchNormState<double> st(3);
  auto y = batch_norm2d(x, gamma, beta, st, true);
  for (int c = 0; c < 3; ++c) {
    double s = 0, s2 = 0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 25; ++i) {
        const double v = y.data()[(n * 3 + c) * 25 + i];
        s += v;
        s2 += v * v;
      }
    CHECK(std::abs(s / 100) < 1e-6);
    CHECK(std::abs(s2 / 100 - 1.0) < 1e-4);
  }

  TD g2({3}, 2.0), b2({3}, 3.0);
  auto z = batch_norm2d(x, g2, b2, st, true);
  double s = 0, s2 = 0;
  for (int n = 0; n < 4; ++n)
    for (int i = 0; i < 25; ++i) {
      const double v = z.data()[(n * 3 + 1) * 25 + i];
      s += v;
      s2 += v * v;
    }
  CHECK(s / 100 == doctest::Approx(3.0));
  CHECK(std::sqrt(s2 / 100 - 9.0) == doctest::Approx(2.0).epsilon(1e-4));

  // Running stats after one step from (0, 1) with momentum 0.1.
  BatchNormState<double> fresh(3);
  batch_norm2d(x, gamma, beta, fresh, true);
  double mean0 = 0;
  for (int n = 0; n < 4; ++n)
    for (int i = 0; i < 25; ++i) mean0 += x.data()[(n * 3) * 25 + i] / 100;
  CHECK(fresh.running_mean[0] == doctest::Approx(0.1 * mean0));

  CHECK_THROWS_AS(batch_norm2d(random_tensor({1, 3, 4, 4}, rng), gamma, beta, st, true), ConfigError);
  CHECK_NOTHROW(batch_norm2d(random_tensor({1, 3, 4, 4}, rng), gamma, beta, st, false));

  auto gr = random_tensor({3}, rng, true, 0.5, 2);
  auto br = random_tensor({3}, rng);
  const auto probe = random_weights(x.numel(), rng);
  BatchNormState<double> scratch(3);
  const double err_train =
      fd_relative_error([&] { return weighted_sum(batch_norm2d(x, gr, br, scratch, true), probe); }, {x, gr, br});
  MESSAGE("batch_norm2d train rel err " << err_train);
  CHECK(err_train < 1e-5);
  scratch.running_mean = {0.3, -0.2, 1.0};
  scratch.running_var = {2.0, 0.5, 1.5};
  CHECK(fd_relative_error([&] { return weighted_sum(batch_norm2d(x, gr, br, scratch, false), probe); }, {x, gr, br}) <
        1e-6);
}

TEST_CASE("relu and concat gradients") {
  Rng rng(5);
  auto x = random_tensor({2, 2, 3, 3}, rng);
  for (auto& v : x.data())
    if (std::abs(v) < 1e-3) v = 0.5;
  const auto probe = random_weights(x.numel(), rng);
  CHECK(fd_relative_error([&] { return weighted_sum(relu(x), probe); }, {x}) < 1e-6);

  auto a = random_tensor({2, 1, 3, 3}, rng), b = random_tensor({2, 3, 3, 3}, rng);
  auto cat = concat_channels(a, b);
  CHECK(cat.shape() == Shape{2, 4, 3, 3});
  CHECK(cat.data()[36 + 0] == a.data()[9]);
  CHECK(cat.data()[36 + 9] == b.data()[27]);
  const auto probe2 = random_weights(cat.numel(), rng);
  CHECK(fd_relative_error([&] { return weighted_sum(concat_channels(a, b), probe2); }, {a, b}) < 1e-6);
  CHECK_THROWS_AS(concat_channels(a, random_tensor({1, 1, 3, 3}, rng)), ConfigError);
}

TEST_CASE("masked_mse") {
  auto pred = TD::from({1, 1, 2, 2}, {1, 2, 3, 4}, true);
  CHECK(masked_mse(pred, {1, 2, 3, 4}, {0, 0, 0, 0}).item() == 0.0);
  CHECK(masked_mse(pred, {-1, 0, 1, 2}, {0, 0, 0, 0}).item() == doctest::Approx(4.0));
  CHECK(masked_mse(pred, {0, 0, 0, 9}, {0, 0, 0, 1}).item() == doctest::Approx(14.0 / 3.0));
  CHECK_THROWS_AS(masked_mse(pred, {0, 0, 0, 0}, {1, 1, 1, 1}), ConstraintError);

  Rng rng(6);
  auto p = random_tensor({2, 1, 4, 4}, rng);
  const auto target = random_weights(32, rng);
  std::vector<std::uint8_t> mask(32, 0);
  for (int i = 0; i < 32; i += 3) mask[i] = 1;
  CHECK(fd_relative_error([&] { return masked_mse(p, target, mask); }, {p}) < 1e-6);
}

TEST_CASE("U-Net end-to-end gradient") {
  UNetConfig cfg{3, 2, 2, 1};
  UNet<double> net(cfg, 7);
  Rng rng(8);
  auto x = random_tensor({2, 3, 8, 8}, rng, true);
  const auto target = random_weights(2 * 64, rng);
  std::vector<std::uint8_t> mask(2 * 64, 0);
  for (int i = 0; i < 128; i += 5) mask[i] = 1;
  // Train-mode BN updates running stats on every call but those do not feed
  // the train-mode output, so repeated evaluations agree.
  auto probe_loss = [&] { return masked_mse(net.forward(x, true), target, mask); };
  std::vector<TD> leaves{x};
  for (auto& t : net.parameters()) leaves.push_back(t);
  const double err = fd_relative_error(probe_loss, leaves);
  MESSAGE("U-Net rel err " << err);
  CHECK(err < 1e-4);
}

TEST_CASE("U-Net shapes and parameter ledger") {
  UNetConfig iso{2, 8, 4, 1};
  UNetConfig dir{3, 8, 4, 1};
  UNet<float> a(iso, 1), b(dir, 2);
  {
    NoGradGuard ng;
    CHECK(a.forward(Tensor<float>({1, 2, 128, 128}), false).shape() == Shape{1, 1, 128, 128});
    CHECK(b.forward(Tensor<float>({1, 3, 128, 128}), false).shape() == Shape{1, 1, 128, 128});
    CHECK(b.forward(Tensor<float>({2, 3, 32, 32}, 0.5f), true).shape() == Shape{2, 1, 32, 32});
    CHECK_THROWS_AS(a.forward(Tensor<float>({1, 2, 40, 40}), false), ConfigError);
    CHECK_THROWS_AS(a.forward(Tensor<float>({1, 3, 32, 32}), false), ConfigError);
  }
  CHECK(a.decoder_input_channels() == std::vector<int>{64 + 64, 32 + 32, 16 + 16, 8 + 8});

  // conv 3x3 1 -> 2 with bias.
  CHECK(2 * 1 * 9 + 2 == 20);
  // Hand ledger, base 8, two input channels.
  const std::int64_t down = 768 + 3552 + 14016 + 55680;
  const std::int64_t bottleneck = 221952;
  const std::int64_t up = 32832 + 8224 + 2064 + 520;
  const std::int64_t dec = 110976 + 27840 + 7008 + 1776;
  const std::int64_t head = 9;
  CHECK(param_count(iso) == down + bottleneck + up + dec + head);
  CHECK(param_count(iso) == 487217);
  CHECK(a.parameter_count() == param_count(iso));
  CHECK(param_count(dir) == 487217 + 8 * 9);
  CHECK(b.parameter_count() == param_count(dir));

  for (int base : {4, 8, 16, 32}) {
    const double ratio = static_cast<double>(param_count({2, 2 * base, 4, 1})) / param_count({2, base, 4, 1});
    CHECK(ratio > 3.5);
    CHECK(ratio < 4.05);
  }
  const auto iso64 = param_count({2, 64, 4, 1}), dir64 = param_count({3, 64, 4, 1});
  MESSAGE("base 64: iso " << iso64 << ", dir " << dir64 << ", both " << iso64 + dir64 << " (reference 31.04e6)");

  // Finite output at initialization.
  Rng rng(9);
  Tensor<float> x({2, 2, 32, 32});
  for (auto& v : x.data()) v = static_cast<float>(uniform(rng, 0, 1));
  NoGradGuard ng;
  for (float v : a.forward(x, true).data()) CHECK(std::isfinite(v));
}

TEST_CASE("Adam") {
  TD x({1}, 1.0, true);
  Adam<double> opt({x}, {1e-3, 0.9, 0.999, 1e-8});
  x.grad()[0] = 0.37;
  opt.step();
  CHECK(x.item() == doctest::Approx(1.0 - 1e-3).epsilon(1e-9));

  TD z({3}, 0.5, true);
  Adam<double> still({z});
  for (int i = 0; i < 5; ++i) still.step();
  CHECK(z.data() == std::vector<double>{0.5, 0.5, 0.5});

  TD q({1}, 1.0, true);
  Adam<double> descent({q}, {0.01, 0.9, 0.999, 1e-8});
  double prev = 1.0;
  for (int i = 0; i < 100; ++i) {
    q.grad()[0] = 2 * q.item();
    descent.step();
    CHECK(std::abs(q.item()) < prev);
    prev = std::abs(q.item());
  }
  CHECK(prev < 0.5);
}

TEST_CASE("D4 loss invariance with a symmetric network in eval mode") {
  UNetConfig cfg{3, 2, 2, 1};
  UNet<double> net(cfg, 11);
  symmetrize_kernels(net);
  Rng rng(12);
  for (auto& [name, buf] : net.named_buffers())
    for (auto& v : *buf) v = name.find("var") != std::string::npos ? uniform(rng, 0.5, 2) : uniform(rng, -0.3, 0.3);

  const int n = 16;
  std::vector<Grid<double>> channels(3, Grid<double>(n, n));
  Grid<double> target(n, n);
  MaskGrid mask(n, n, 0);
  for (auto& c : channels)
    for (auto& v : c.storage()) v = uniform(rng, 0, 1);
  for (auto& v : target.storage()) v = uniform(rng, 0, 1);
  for (auto& m : mask.storage()) m = uniform01(rng) < 0.3;

  auto loss_for = [&](int variant) {
    std::vector<double> in;
    for (const auto& c : channels) {
      const auto t = synth::transform_d4(c, variant);
      in.insert(in.end(), t.storage().begin(), t.storage().end());
    }
    const auto tg = synth::transform_d4(target, variant);
    const auto mk = synth::transform_d4(mask, variant);
    NoGradGuard ng;
    const auto pred = net.forward(TD::from({1, 3, n, n}, in), false);
    return masked_mse(pred, tg.storage(), mk.storage()).item();
  };
  const double base = loss_for(0);
  for (int v = 1; v < 8; ++v) CHECK(loss_for(v) == doctest::Approx(base).epsilon(1e-5));
}
