// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmst/error.hpp"
#include "cmst/nn.hpp"
#include "cmst/random.hpp"

#include "doctest.h"

#include <cmath>
#include <numeric>

using namespace cmst;
using namespace cmst::nn;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> d(0.0, scale);
  for (auto& v : t.values())
    v = d(rng);
  return t;
}

Tensor one_hot(std::size_t batch, std::size_t classes, Rng& rng) {
  Tensor t({batch, classes}, 0.0);
  std::uniform_int_distribution<std::size_t> d(0, classes - 1);
  for (std::size_t b = 0; b < batch; ++b)
    t[b * classes + d(rng)] = 1.0;
  return t;
}

// ||a - b|| / (||a|| + ||b||), the usual gradient-check metric.
double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(na) + std::sqrt(nb);
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

double backward_vs_fd(const Architecture& arch, std::uint64_t seed, LossKind kind, Mode mode,
                      std::size_t batch = 4) {
  Rng rng(seed);
  Network net = init_network(arch, seed, Init::glorot_uniform);
  // perturb batch-norm affine terms away from the (1, 0) init
  for (std::size_t i = 0; i < arch.layers.size(); ++i)
    if (arch.layers[i].kind == LayerKind::batchnorm)
      for (auto& t : net.layers[i].trainable)
        for (auto& v : t.values())
          v += std::normal_distribution<double>(0.0, 0.3)(rng);
  Tensor x = random_tensor({batch, arch.input.channels, arch.input.length}, rng);
  const auto out = arch.output();
  Tensor target = kind == LossKind::cross_entropy ? one_hot(batch, out.size(), rng)
                                                  : random_tensor({batch, out.size()}, rng);
  if (out.length != 1 || kind == LossKind::mse)
    target.reshape(predict(net, x).shape());

  Network train_copy = net;
  auto fr = forward(train_copy, x, mode, seed);
  auto g = backward(net, fr.cache, loss_gradient(kind, fr.output, target));
  auto fd = finite_diff_gradient(net, x, target, kind, 1e-6, mode, seed);
  return relative_error(flatten(g), flatten(fd));
}

Architecture small_cnn(std::size_t classes) {
  Architecture a;
  a.input = {1, 120};
  const std::size_t filters[4] = {2, 3, 3, 4};
  for (auto f : filters) {
    a.layers.push_back(LayerSpec::conv1d(f, 3));
    a.layers.push_back(LayerSpec::batchnorm());
    a.layers.push_back(LayerSpec::relu());
    a.layers.push_back(LayerSpec::maxpool1d(2));
  }
  a.layers.push_back(LayerSpec::dropout_layer(0.5));
  a.layers.push_back(LayerSpec::dense(6));
  a.layers.push_back(LayerSpec::dense(classes));
  a.layers.push_back(LayerSpec::softmax());
  return a;
}

} // namespace

TEST_CASE("relu, softmax and identity-kernel conv on hand examples") {
  Architecture relu_arch{{1, 3}, {LayerSpec::relu()}};
  Network relu_net = init_network(relu_arch, 1, Init::glorot_uniform);
  Tensor x({1, 1, 3}, {-1.0, 0.0, 2.0});
  CHECK(predict(relu_net, x) == Tensor({1, 1, 3}, {0.0, 0.0, 2.0}));

  Architecture sm{{3, 1}, {LayerSpec::dense(3), LayerSpec::softmax()}};
  Network sm_net = init_network(sm, 3, Init::glorot_uniform);
  for (auto& v : sm_net.layers[0].trainable[0].values())
    v = 0.0;
  for (double c : {-5.0, 0.0, 42.0}) {
    for (auto& v : sm_net.layers[0].trainable[1].values())
      v = c;
    Tensor y = predict(sm_net, Tensor({1, 3, 1}, {0.3, -1.0, 2.0}));
    REQUIRE(y.shape() == std::vector<std::size_t>{1, 3});
    for (double v : y.values())
      CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }

  Architecture conv{{1, 3}, {LayerSpec::conv1d(1, 3)}};
  Network conv_net = init_network(conv, 5, Init::glorot_uniform);
  conv_net.layers[0].trainable[0] = Tensor({1, 1, 3}, {0.0, 1.0, 0.0});
  Tensor y = predict(conv_net, Tensor({1, 1, 3}, {5.0, 7.0, 9.0}));
  REQUIRE(y.size() == 1);
  CHECK(y[0] == 7.0);
}

TEST_CASE("padding keeps length for odd kernels") {
  Architecture a{{1, 5}, {LayerSpec::conv1d(1, 3, 1, 1)}};
  Network n = init_network(a, 1, Init::glorot_uniform);
  n.layers[0].trainable[0] = Tensor({1, 1, 3}, {1.0, 1.0, 1.0});
  Tensor y = predict(n, Tensor({1, 1, 5}, {1, 2, 3, 4, 5}));
  CHECK(y == Tensor({1, 1, 5}, {3, 6, 9, 12, 9}));
  // stride 2 with padding reads the same padded signal
  Architecture s{{1, 5}, {LayerSpec::conv1d(1, 3, 2, 1)}};
  Network ns = init_network(s, 1, Init::glorot_uniform);
  ns.layers[0].trainable[0] = Tensor({1, 1, 3}, {1.0, 1.0, 1.0});
  CHECK(predict(ns, Tensor({1, 1, 5}, {1, 2, 3, 4, 5})) == Tensor({1, 1, 3}, {3, 9, 9}));
}

TEST_CASE("loss values") {
  CHECK(loss(LossKind::mse, Tensor({2}, {1.0, 0.0}), Tensor({2}, {1.0, 0.0})) == 0.0);
  CHECK(loss(LossKind::mse, Tensor({2}, {1.0, 0.0}), Tensor({2}, {0.0, 0.0})) == 0.5);
  const double ce = loss(LossKind::cross_entropy, Tensor({1, 4}, {0.25, 0.25, 0.25, 0.25}),
                         Tensor({1, 4}, {0.0, 0.0, 1.0, 0.0}));
  CHECK(ce == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(ce == doctest::Approx(1.3863).epsilon(1e-4));
  CHECK(loss(LossKind::cross_entropy, Tensor({1, 2}, {0.0, 1.0}), Tensor({1, 2}, {0.0, 1.0})) == 0.0);
  // saturated softmax: clamped, finite
  const double clamped =
      loss(LossKind::cross_entropy, Tensor({1, 2}, {0.0, 1.0}), Tensor({1, 2}, {1.0, 0.0}));
  CHECK(clamped == doctest::Approx(-std::log(kProbabilityFloor)));

  CHECK_THROWS_AS(loss(LossKind::mse, Tensor({2}), Tensor({3})), ShapeError);
  CHECK_THROWS_AS(loss(LossKind::cross_entropy, Tensor({1, 2}, {0.5, 0.5}), Tensor({1, 2}, {0.5, 0.5})),
                  InvalidArgument);
}

TEST_CASE("dense backward matches the hand gradient") {
  Architecture a{{1, 1}, {LayerSpec::dense(1, false)}};
  Network net = init_network(a, 1, Init::fan_in_uniform);
  net.layers[0].trainable[0] = Tensor({1, 1}, {1.0});
  Tensor x({1, 1}, {2.0});
  Tensor target({1, 1}, {0.0});
  auto fr = forward(net, x, Mode::train);
  auto g = backward(net, fr.cache, loss_gradient(LossKind::mse, fr.output, target));
  CHECK(g[0][0][0] == 8.0);

  auto fd = finite_diff_gradient(net, x, target, LossKind::mse, 1e-5);
  CHECK(std::abs(fd[0][0][0] - 8.0) < 1e-6);
}

TEST_CASE("zero loss gradient gives zero parameter gradients") {
  Architecture a = small_cnn(3);
  Network net = init_network(a, 9, Init::glorot_uniform);
  Rng rng(9);
  auto fr = forward(net, random_tensor({3, 1, 120}, rng), Mode::train, 4);
  auto g = backward(net, fr.cache, Tensor(fr.output.shape(), 0.0));
  for (double v : flatten(g))
    CHECK(v == 0.0);
}

TEST_CASE("conv bias gradient equals the summed output gradient") {
  Architecture a{{1, 3}, {LayerSpec::conv1d(1, 3)}};
  Network net = init_network(a, 2, Init::glorot_uniform);
  net.layers[0].trainable[0] = Tensor({1, 1, 3}, {0.0, 1.0, 0.0});
  Tensor x({1, 1, 3}, {5.0, 7.0, 9.0});
  Tensor target({1, 1, 1}, {4.0});
  Network probe = net;
  auto out = forward(probe, x, Mode::train).output;
  auto lg = loss_gradient(LossKind::mse, out, target);
  const double mean_lg = std::accumulate(lg.values().begin(), lg.values().end(), 0.0) /
                         static_cast<double>(lg.size());
  auto fd = finite_diff_gradient(net, x, target, LossKind::mse, 1e-5);
  CHECK(fd[0][1][0] == doctest::Approx(mean_lg).epsilon(1e-8));
  CHECK(mean_lg == doctest::Approx(6.0));  // 2 * (7 - 4)
}

TEST_CASE("dropout in infer mode is invisible to gradients") {
  Rng rng(3);
  Architecture plain{{1, 6}, {LayerSpec::dense(4), LayerSpec::tanh(), LayerSpec::dense(2)}};
  Architecture with_drop{{1, 6},
                         {LayerSpec::dense(4), LayerSpec::tanh(), LayerSpec::dropout_layer(0.4),
                          LayerSpec::dense(2)}};
  Network a = init_network(plain, 11, Init::fan_in_uniform);
  Network b = init_network(with_drop, 11, Init::fan_in_uniform);
  b.layers[0] = a.layers[0];
  b.layers[3] = a.layers[2];
  Tensor x = random_tensor({3, 6}, rng);
  Tensor t = random_tensor({3, 2}, rng);
  auto ga = flatten(finite_diff_gradient(a, x, t, LossKind::mse, 1e-6, Mode::infer));
  auto gb = flatten(finite_diff_gradient(b, x, t, LossKind::mse, 1e-6, Mode::infer));
  CHECK(ga == gb);

  auto fr = forward(b, x, Mode::infer);
  auto g = flatten(backward(b, fr.cache, loss_gradient(LossKind::mse, fr.output, t)));
  CHECK(relative_error(g, ga) < 1e-8);
}

TEST_CASE("full CNN backward agrees with finite differences") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed)
    CHECK(backward_vs_fd(small_cnn(3), seed, LossKind::cross_entropy, Mode::train) < 1e-5);
}

TEST_CASE("every layer kind agrees with finite differences over 20 seeds") {
  struct Case {
    const char* name;
    Architecture arch;
    LossKind loss;
    double tol;
  };
  const std::vector<Case> cases = {
      {"dense", {{1, 7}, {LayerSpec::dense(5), LayerSpec::dense(3)}}, LossKind::mse, 1e-5},
      {"conv1d", {{2, 11}, {LayerSpec::conv1d(3, 3), LayerSpec::conv1d(2, 2, 2, 1)}}, LossKind::mse, 1e-5},
      {"batchnorm", {{2, 9}, {LayerSpec::conv1d(3, 3), LayerSpec::batchnorm(), LayerSpec::dense(2)}},
       LossKind::mse, 1e-4},
      {"relu", {{1, 9}, {LayerSpec::conv1d(3, 3), LayerSpec::relu(), LayerSpec::dense(2)}}, LossKind::mse, 1e-4},
      {"tanh", {{1, 6}, {LayerSpec::dense(5), LayerSpec::tanh(), LayerSpec::dense(2)}}, LossKind::mse, 1e-4},
      {"maxpool1d", {{1, 12}, {LayerSpec::conv1d(2, 3), LayerSpec::maxpool1d(3), LayerSpec::dense(2)}},
       LossKind::mse, 1e-4},
      {"dropout", {{1, 8}, {LayerSpec::dense(6), LayerSpec::dropout_layer(0.3), LayerSpec::dense(2)}},
       LossKind::mse, 1e-4},
      {"softmax", {{1, 5}, {LayerSpec::dense(4), LayerSpec::softmax()}}, LossKind::cross_entropy, 1e-4},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    double worst = 0.0;
    for (std::uint64_t seed = 100; seed < 120; ++seed)
      worst = std::max(worst, backward_vs_fd(c.arch, seed, c.loss, Mode::train));
    CHECK(worst < c.tol);
  }
}

TEST_CASE("softmax outputs are a probability vector") {
  Rng rng(17);
  Architecture a{{1, 4}, {LayerSpec::dense(9), LayerSpec::softmax()}};
  for (int s = 0; s < 20; ++s) {
    Network net = init_network(a, static_cast<std::uint64_t>(s), Init::glorot_uniform);
    Tensor y = predict(net, random_tensor({5, 4}, rng, 5.0));
    for (std::size_t b = 0; b < 5; ++b) {
      double sum = 0.0;
      for (std::size_t u = 0; u < 9; ++u) {
        const double p = y[b * 9 + u];
        CHECK(p > 0.0);
        CHECK(p < 1.0);
        sum += p;
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("batch norm standardizes each channel in train mode") {
  Rng rng(23);
  Architecture a{{3, 50}, {LayerSpec::batchnorm()}};
  Network net = init_network(a, 1, Init::glorot_uniform);
  Tensor x = random_tensor({8, 3, 50}, rng, 100.0);
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] += 40.0;
  auto fr = forward(net, x, Mode::train);
  const auto& xh = fr.cache.layers[0].normalized;
  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t b = 0; b < 8; ++b)
      for (std::size_t t = 0; t < 50; ++t)
        sum += xh[(b * 3 + c) * 50 + t];
    const double mean = sum / 400.0;
    for (std::size_t b = 0; b < 8; ++b)
      for (std::size_t t = 0; t < 50; ++t) {
        const double d = xh[(b * 3 + c) * 50 + t] - mean;
        sq += d * d;
      }
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(sq / 400.0 - 1.0) < 1e-6);
  }
  // running statistics moved toward the batch and stay positive
  for (double v : net.layers[0].running[1].values())
    CHECK(v > 1.0);
  for (double v : net.layers[0].running[0].values())
    CHECK(v != 0.0);
}

TEST_CASE("maxpool routes every output gradient to one input") {
  Rng rng(5);
  Architecture a{{2, 12}, {LayerSpec::conv1d(2, 1), LayerSpec::maxpool1d(4), LayerSpec::dense(1)}};
  Network net = init_network(a, 5, Init::glorot_uniform);
  auto fr = forward(net, random_tensor({3, 2, 12}, rng), Mode::train);
  const auto& lc = fr.cache.layers[1];
  REQUIRE(lc.argmax.size() == 3 * 2 * 3);
  // every argmax lies inside its own window
  for (std::size_t j = 0; j < lc.argmax.size(); ++j) {
    const std::size_t row = j / 3, t = j % 3;
    CHECK(lc.argmax[j] / 12 == row);
    CHECK(lc.argmax[j] % 12 / 4 == t);
  }
  Tensor g = random_tensor({3, 2, 3}, rng);
  Tensor routed({3, 2, 12}, 0.0);
  for (std::size_t j = 0; j < g.size(); ++j)
    routed[lc.argmax[j]] += g[j];
  CHECK(std::accumulate(routed.values().begin(), routed.values().end(), 0.0) ==
        doctest::Approx(std::accumulate(g.values().begin(), g.values().end(), 0.0)).epsilon(1e-14));
}

TEST_CASE("infer mode is deterministic and leaves the network untouched") {
  Rng rng(8);
  Network net = init_network(small_cnn(4), 31, Init::glorot_uniform);
  const Network before = net;
  Tensor x = random_tensor({2, 1, 120}, rng);
  Tensor a = predict(net, x);
  auto fr = forward(net, x, Mode::infer);
  CHECK(a == fr.output);
  CHECK(net == before);
  CHECK(a == predict(net, x));
}

TEST_CASE("shape and input errors") {
  Network net = init_network(small_cnn(2), 1, Init::glorot_uniform);
  CHECK_THROWS_AS(predict(net, Tensor({1, 1, 119})), ShapeError);
  Tensor bad({1, 1, 120}, 0.0);
  bad[3] = std::nan("");
  CHECK_THROWS_AS(predict(net, bad), InvalidArgument);

  Rng rng(1);
  auto fr = forward(net, random_tensor({2, 1, 120}, rng), Mode::train);
  Tensor lg(fr.output.shape(), 0.1);
  backward(net, fr.cache, lg);
  CHECK(fr.cache.consumed());
  CHECK_THROWS_AS(backward(net, fr.cache, lg), InvalidArgument);

  Architecture too_short{{1, 10}, {LayerSpec::conv1d(1, 3), LayerSpec::maxpool1d(16)}};
  CHECK_THROWS_AS(too_short.shapes(), ShapeError);
  CHECK_THROWS_AS(LayerSpec::dropout_layer(1.0).validate(), InvalidArgument);
  CHECK_THROWS_AS(LayerSpec::conv1d(1, 0).validate(), InvalidArgument);
  CHECK_THROWS_AS(LayerSpec::dense(0).validate(), InvalidArgument);
  CHECK_THROWS_AS(finite_diff_gradient(net, Tensor({1, 1, 120}), Tensor({1, 2}), LossKind::mse, 1e-2),
                  InvalidArgument);
}
