#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "vscc/layers.hpp"
#include "vscc/rng.hpp"

using namespace vscc;

namespace {

Tensor random_tensor(std::vector<int> shape, uint64_t seed, double scale = 1.0) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.data) v = scale * rng.gaussian();
  return t;
}

// Scalar objective for gradient checking: weighted sum of the layer
// output, so d(obj)/d(out) is a fixed tensor.
double weighted_sum(const Tensor& out, const Tensor& weights) {
  double acc = 0.0;
  for (int64_t i = 0; i < out.numel(); ++i) acc += out.data[i] * weights.data[i];
  return acc;
}

// Central-difference check of input and parameter gradients for any
// forward(x, train) -> Tensor layer.
template <typename Layer>
void check_layer_gradients(Layer& layer, const Tensor& input, uint64_t seed,
                           double tolerance = 1e-6) {
  Tensor probe_input = input;
  Tensor out = layer.forward(probe_input, /*train=*/true);
  const Tensor ow = random_tensor(out.shape, seed + 1);

  std::vector<Param*> params;
  layer.collect(params);
  for (Param* p : params) p->grad.zero();
  const Tensor gin = layer.backward(ow);

  const double h = 1e-5;
  auto fd = [&](double* slot) {
    const double saved = *slot;
    *slot = saved + h;
    const double up = weighted_sum(layer.forward(probe_input, false), ow);
    *slot = saved - h;
    const double down = weighted_sum(layer.forward(probe_input, false), ow);
    *slot = saved;
    return (up - down) / (2 * h);
  };

  Rng pick(seed + 2);
  for (int trial = 0; trial < 8; ++trial) {
    const auto i = static_cast<int64_t>(pick.below(static_cast<uint64_t>(input.numel())));
    const double expected = fd(&probe_input.data[i]);
    CHECK(gin.data[i] == doctest::Approx(expected).epsilon(tolerance));
  }
  for (Param* p : params) {
    for (int trial = 0; trial < 4; ++trial) {
      const auto i = static_cast<int64_t>(pick.below(static_cast<uint64_t>(p->value.numel())));
      const double expected = fd(&p->value.data[i]);
      CHECK(p->grad.data[i] == doctest::Approx(expected).epsilon(tolerance));
    }
  }
}

}  // namespace

TEST_CASE("swish values") {
  CHECK(swish_scalar(0.0) == 0.0);
  CHECK(swish_scalar(1.0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(swish_scalar(1.0) == doctest::Approx(0.7310585786300049).epsilon(1e-12));
}

TEST_CASE("conv2d shapes") {
  Rng rng(1);
  Conv2d conv("c", 3, 8, 3, 1, 1);
  conv.init_weights(rng);
  const Tensor x = random_tensor({2, 3, 16, 16}, 2);
  const Tensor y = conv.forward(x, false);
  CHECK(y.shape == std::vector<int>{2, 8, 16, 16});

  Conv2d down("d", 8, 8, 3, 2, 1);
  down.init_weights(rng);
  const Tensor z = down.forward(y, false);
  CHECK(z.shape == std::vector<int>{2, 8, 8, 8});

  Conv2d point("p", 8, 4, 1, 1, 0);
  point.init_weights(rng);
  CHECK(point.forward(z, false).shape == std::vector<int>{2, 4, 8, 8});

  CHECK_THROWS_AS(conv.forward(z, false), std::invalid_argument);
}

TEST_CASE("conv2d gradients") {
  Rng rng(3);
  SUBCASE("3x3 stride 1") {
    Conv2d conv("c", 3, 4, 3, 1, 1);
    conv.init_weights(rng);
    check_layer_gradients(conv, random_tensor({2, 3, 6, 6}, 4), 10);
  }
  SUBCASE("3x3 stride 2") {
    Conv2d conv("c", 4, 6, 3, 2, 1);
    conv.init_weights(rng);
    check_layer_gradients(conv, random_tensor({2, 4, 8, 8}, 5), 11);
  }
  SUBCASE("1x1") {
    Conv2d conv("c", 5, 3, 1, 1, 0);
    conv.init_weights(rng);
    check_layer_gradients(conv, random_tensor({2, 5, 4, 4}, 6), 12);
  }
}

TEST_CASE("groupnorm group count and normalization") {
  GroupNorm gn64("g", 64, 32);
  CHECK(gn64.group_count() == 2);
  GroupNorm gn8("g8", 8, 32);
  CHECK(gn8.group_count() == 1);

  GroupNorm gn("gn", 4, 2);
  const Tensor x = random_tensor({3, 4, 5, 5}, 7, 2.5);
  const Tensor y = gn.forward(x, false);
  // Unit gamma, zero beta: each (image, group) slice is standardized.
  for (int n = 0; n < 3; ++n) {
    for (int g = 0; g < 2; ++g) {
      double mean = 0.0, var = 0.0;
      for (int c = g * 2; c < g * 2 + 2; ++c)
        for (int i = 0; i < 25; ++i) mean += y.at(n, c, i / 5, i % 5);
      mean /= 50;
      for (int c = g * 2; c < g * 2 + 2; ++c)
        for (int i = 0; i < 25; ++i) {
          const double d = y.at(n, c, i / 5, i % 5) - mean;
          var += d * d;
        }
      var /= 50;
      CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
      CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
  }
}

TEST_CASE("groupnorm gradients") {
  GroupNorm gn("gn", 6, 3);
  Rng rng(9);
  for (auto& v : gn.gamma.value.data) v = 0.5 + rng.uniform();
  for (auto& v : gn.beta.value.data) v = rng.gaussian();
  check_layer_gradients(gn, random_tensor({2, 6, 4, 4}, 13), 14, 1e-5);
}

TEST_CASE("upsample2x") {
  Upsample2x up;
  Tensor x({1, 1, 2, 2});
  x.data = {1, 2, 3, 4};
  const Tensor y = up.forward(x, false);
  CHECK(y.shape == std::vector<int>{1, 1, 4, 4});
  CHECK(y.at(0, 0, 0, 0) == 1);
  CHECK(y.at(0, 0, 0, 1) == 1);
  CHECK(y.at(0, 0, 1, 1) == 1);
  CHECK(y.at(0, 0, 0, 2) == 2);
  CHECK(y.at(0, 0, 3, 3) == 4);

  Tensor g({1, 1, 4, 4});
  g.fill(1.0);
  const Tensor gin = up.backward(g);
  CHECK(gin.at(0, 0, 0, 0) == 4.0);
}

TEST_CASE("resnet block") {
  Rng rng(20);
  SUBCASE("zeroing the final conv leaves the channel-projected identity") {
    ResnetBlock same("b", 4, 4, 2);
    same.init_weights(rng);
    same.conv2().weight.value.zero();
    same.conv2().bias.value.zero();
    const Tensor x = random_tensor({2, 4, 6, 6}, 21);
    const Tensor y = same.forward(x, false);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data[i] == doctest::Approx(x.data[i]));

    ResnetBlock proj("p", 4, 6, 2);
    proj.init_weights(rng);
    proj.conv2().weight.value.zero();
    proj.conv2().bias.value.zero();
    CHECK(proj.has_projection());
    const Tensor yp = proj.forward(x, false);
    CHECK(yp.shape == std::vector<int>{2, 6, 6, 6});
  }
  SUBCASE("gradients, same width") {
    ResnetBlock block("b", 4, 4, 2);
    block.init_weights(rng);
    check_layer_gradients(block, random_tensor({2, 4, 4, 4}, 22), 23, 1e-5);
  }
  SUBCASE("gradients, projected width") {
    ResnetBlock block("b", 3, 5, 3);
    block.init_weights(rng);
    check_layer_gradients(block, random_tensor({2, 3, 4, 4}, 24), 25, 1e-5);
  }
}

TEST_CASE("attention weights are row-stochastic") {
  const int positions = 9, channels = 4;
  const Tensor q = random_tensor({positions, channels}, 31);
  const Tensor k = random_tensor({positions, channels}, 32);
  const Tensor w = attention_weights(q, k, channels);
  for (int a = 0; a < positions; ++a) {
    double sum = 0.0;
    for (int b = 0; b < positions; ++b) {
      const double v = w.data[static_cast<size_t>(a) * positions + b];
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("attention weights degenerate cases") {
  SUBCASE("single position: weight is exactly 1") {
    const Tensor q = random_tensor({1, 3}, 33);
    const Tensor k = random_tensor({1, 3}, 34);
    const Tensor w = attention_weights(q, k, 3);
    CHECK(w.data[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("uniform keys give uniform weights") {
    const int positions = 6;
    const Tensor q = random_tensor({positions, 2}, 35);
    Tensor k({positions, 2});
    for (int p = 0; p < positions; ++p) {
      k.data[static_cast<size_t>(p) * 2] = 0.7;
      k.data[static_cast<size_t>(p) * 2 + 1] = -0.2;
    }
    const Tensor w = attention_weights(q, k, 2);
    for (double v : w.data) CHECK(v == doctest::Approx(1.0 / positions).epsilon(1e-9));
  }
}

TEST_CASE("attention block is shape preserving and differentiable") {
  Rng rng(40);
  AttentionBlock attn("a", 6, 3);
  attn.init_weights(rng);
  const Tensor x = random_tensor({2, 6, 3, 3}, 41);
  AttentionBlock probe("a", 6, 3);
  probe.init_weights(rng);  // different draws; just needs valid weights
  const Tensor y = attn.forward(x, false);
  CHECK(y.shape == x.shape);
  check_layer_gradients(attn, x, 42, 1e-5);
}

TEST_CASE("tanh layer output range and exact derivative") {
  const Tensor x = random_tensor({2, 3, 4, 4}, 50);
  TanhLayer act;
  Tensor out = act.forward(x, true);
  for (double v : out.data) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
  const Tensor ow = random_tensor(out.shape, 53);
  const Tensor gin = act.backward(ow);
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double expected = ow.data[i] * (1.0 - std::tanh(x.data[i]) * std::tanh(x.data[i]));
    CHECK(gin.data[i] == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("swish layer gradient matches finite differences") {
  const Tensor x = random_tensor({2, 2, 3, 3}, 54);
  Swish act;
  act.forward(x, true);
  Tensor ow = random_tensor(x.shape, 55);
  const Tensor gin = act.backward(ow);
  const double h = 1e-6;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double fd =
        (swish_scalar(x.data[i] + h) - swish_scalar(x.data[i] - h)) / (2 * h) * ow.data[i];
    CHECK(gin.data[i] == doctest::Approx(fd).epsilon(1e-6));
  }
}
