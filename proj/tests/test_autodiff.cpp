#include <doctest.h>

#include "mevo/autodiff.hpp"
#include "mevo/rng.hpp"
#include "test_util.hpp"

using namespace mevo;
using testutil::gradient_check;
using testutil::random_tensor;

namespace {

ag::Var leaf(const Tensor& t) { return ag::parameter(t); }

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
  Rng rng(101);
  ag::Var a = leaf(random_tensor({2, 3, 3}, rng));
  ag::Var b = leaf(random_tensor({2, 3, 3}, rng, 0.2, 1.5));

  CHECK(gradient_check([&] { return ag::mean(a + b); }, {a, b}) < 1e-7);
  CHECK(gradient_check([&] { return ag::mean(a - b); }, {a, b}) < 1e-7);
  CHECK(gradient_check([&] { return ag::sum(a * b); }, {a, b}) < 1e-7);
  CHECK(gradient_check([&] { return ag::mean(ag::scale(a, -2.5)); }, {a}) < 1e-7);
  CHECK(gradient_check([&] { return ag::mean(ag::elu(a)); }, {a}) < 1e-6);
  CHECK(gradient_check([&] { return ag::mean(ag::sigmoid(a)); }, {a}) < 1e-6);
  CHECK(gradient_check([&] { return ag::mean(ag::abs(a)); }, {a}) < 1e-6);
  CHECK(gradient_check([&] { return ag::mean_abs_diff(a, b); }, {a, b}) < 1e-6);
}

TEST_CASE("gradient accumulates through shared subexpressions") {
  ag::Var x = leaf(Tensor::from_values({2}, {3.0, -1.0}));
  ag::Var y = x * x;  // d/dx = 2x
  ag::Var loss = ag::sum(y);
  x.zero_grad();
  ag::backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  CHECK(x.grad()[1] == doctest::Approx(-2.0));
}

TEST_CASE("softmax ops normalize and differentiate") {
  Rng rng(7);
  ag::Var logits = leaf(random_tensor({4, 3, 2}, rng, -2.0, 2.0));

  SUBCASE("channel softmax sums to one per pixel") {
    Tensor s = ag::softmax_channels(logits).value();
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 2; ++x) {
        double sum = 0.0;
        for (int c = 0; c < 4; ++c) sum += s.at(c, y, x);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
      }
  }
  SUBCASE("spatial softmax sums to one per channel") {
    Tensor s = ag::spatial_softmax(logits).value();
    for (int c = 0; c < 4; ++c) {
      double sum = 0.0;
      for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 2; ++x) sum += s.at(c, y, x);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
  SUBCASE("gradients") {
    Rng wr(3);
    Tensor wt = random_tensor({4, 3, 2}, wr);
    ag::Var w = ag::constant(wt);
    CHECK(gradient_check([&] { return ag::sum(ag::softmax_channels(logits) * w); }, {logits}) < 1e-6);
    CHECK(gradient_check([&] { return ag::sum(ag::spatial_softmax(logits) * w); }, {logits}) < 1e-6);
  }
}

TEST_CASE("concat and broadcast_mul") {
  Rng rng(11);
  ag::Var a = leaf(random_tensor({2, 2, 3}, rng));
  ag::Var b = leaf(random_tensor({3, 2, 3}, rng));
  ag::Var m = leaf(random_tensor({1, 2, 3}, rng, 0.1, 1.0));

  Tensor cat = ag::concat_channels({a, b}).value();
  CHECK(cat.dim(0) == 5);
  CHECK(cat.at(0, 1, 2) == a.value().at(0, 1, 2));
  CHECK(cat.at(2, 1, 2) == b.value().at(0, 1, 2));

  CHECK(gradient_check([&] { return ag::mean(ag::concat_channels({a, b})); }, {a, b}) < 1e-7);
  CHECK(gradient_check([&] { return ag::mean(ag::broadcast_mul(m, b)); }, {m, b}) < 1e-7);
}

TEST_CASE("conv2d matches finite differences") {
  Rng rng(23);
  ag::Var x = leaf(random_tensor({2, 5, 6}, rng));
  ag::Var w = leaf(random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5));
  ag::Var b = leaf(random_tensor({3}, rng, -0.1, 0.1));

  SUBCASE("stride 1, padded") {
    ag::Var y = ag::conv2d(x, w, b, 1, 1);
    CHECK(y.value().dim(0) == 3);
    CHECK(y.value().dim(1) == 5);
    CHECK(y.value().dim(2) == 6);
    CHECK(gradient_check([&] { return ag::mean(ag::conv2d(x, w, b, 1, 1)); }, {x, w, b}) < 1e-6);
  }
  SUBCASE("stride 2") {
    ag::Var y = ag::conv2d(x, w, b, 2, 1);
    CHECK(y.value().dim(1) == 3);
    CHECK(y.value().dim(2) == 3);
    CHECK(gradient_check([&] { return ag::mean(ag::conv2d(x, w, b, 2, 1)); }, {x, w, b}) < 1e-6);
  }
  SUBCASE("1x1 kernel") {
    Rng r2(5);
    ag::Var w1 = leaf(random_tensor({4, 2, 1, 1}, r2));
    ag::Var b1 = leaf(random_tensor({4}, r2));
    CHECK(gradient_check([&] { return ag::mean(ag::conv2d(x, w1, b1, 1, 0)); }, {x, w1, b1}) < 1e-6);
  }
  SUBCASE("hand value: 1x1 input") {
    ag::Var xs = leaf(Tensor::from_values({1, 1, 1}, {2.0}));
    ag::Var ws = leaf(Tensor::from_values({1, 1, 1, 1}, {3.0}));
    ag::Var bs = leaf(Tensor::from_values({1}, {0.5}));
    CHECK(ag::conv2d(xs, ws, bs, 1, 0).value().item() == doctest::Approx(6.5));
  }
}

TEST_CASE("avg_pool2 and resize gradients") {
  Rng rng(31);
  ag::Var x = leaf(random_tensor({2, 4, 6}, rng));
  CHECK(gradient_check([&] { return ag::mean(ag::avg_pool2(x)); }, {x}) < 1e-7);
  CHECK(gradient_check([&] { return ag::mean(ag::resize_bilinear(x, 7, 9)); }, {x}) < 1e-6);
  CHECK(gradient_check([&] { return ag::mean(ag::resize_bilinear(x, 2, 3)); }, {x}) < 1e-6);
}

TEST_CASE("backward rejects non-scalar loss") {
  ag::Var x = leaf(Tensor::from_values({2}, {1.0, 2.0}));
  CHECK_THROWS_AS(ag::backward(x), std::invalid_argument);
}
