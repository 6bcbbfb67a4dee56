#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "photosfm/autodiff.hpp"

using namespace photosfm;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (int i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

// Worst relative finite-difference error of a unary op, probed through a
// fixed random weighting so every output element contributes a distinct
// gradient.
double unary_grad_error(const std::function<Var(const Var&)>& op, const Tensor& x0,
                        std::uint64_t wseed = 99) {
  Var x = Var::param(x0);
  const Tensor w = random_tensor(op(x).shape(), wseed, 0.5, 1.5);
  const auto f = [&]() { return mean(op(x) * Var::constant(w)); };
  return grad_check(f, {x}).max_rel_error;
}

double binary_grad_error(const std::function<Var(const Var&, const Var&)>& op, const Tensor& a0,
                         const Tensor& b0, std::uint64_t wseed = 99) {
  Var a = Var::param(a0);
  Var b = Var::param(b0);
  const Tensor w = random_tensor(op(a, b).shape(), wseed, 0.5, 1.5);
  const auto f = [&]() { return mean(op(a, b) * Var::constant(w)); };
  return grad_check(f, {a, b}).max_rel_error;
}

}  // namespace

TEST_CASE("leaf kinds and bookkeeping") {
  Var p = Var::param(Tensor({2, 2}, {1, 2, 3, 4}));
  CHECK(p.is_leaf());
  CHECK(p.requires_grad());
  Var c = Var::constant(Tensor::scalar(3.0));
  CHECK(c.is_leaf());
  CHECK_FALSE(c.requires_grad());
  CHECK(Var::scalar(2.5).value()[0] == 2.5);
  CHECK(p.id() < add(p, p).id());  // ids are topologically ordered
}

TEST_CASE("constant subgraphs carry no gradient") {
  Var a = Var::constant(Tensor({1, 2, 2}, 1.0));
  Var b = Var::constant(Tensor({1, 2, 2}, 2.0));
  Var s = add(mul(a, b), a);
  CHECK_FALSE(s.requires_grad());
  CHECK(backward(mean(s)).empty());
}

TEST_CASE("elementwise values match the standard library") {
  const Tensor x0 = random_tensor({1, 3, 4}, 5, 0.3, 1.7);
  Var x = Var::constant(x0);
  const Tensor lg = vlog(x).value(), ex = vexp(x).value(), sg = sigmoid(x).value(),
               sp = softplus(x).value(), sq = vsqrt(x).value();
  for (int i = 0; i < x0.size(); ++i) {
    CHECK(lg[i] == doctest::Approx(std::log(x0[i])).epsilon(1e-15));
    CHECK(ex[i] == doctest::Approx(std::exp(x0[i])).epsilon(1e-15));
    CHECK(sg[i] == doctest::Approx(1.0 / (1.0 + std::exp(-x0[i]))).epsilon(1e-15));
    CHECK(sp[i] == doctest::Approx(std::log1p(std::exp(x0[i]))).epsilon(1e-14));
    CHECK(sq[i] == doctest::Approx(std::sqrt(x0[i])).epsilon(1e-15));
  }
}

TEST_CASE("elu and relu cover both halves") {
  Var x = Var::constant(Tensor({1, 1, 4}, {-2.0, -0.5, 0.5, 2.0}));
  const Tensor e = elu(x).value(), r = relu(x).value();
  CHECK(e[0] == doctest::Approx(std::exp(-2.0) - 1.0).epsilon(1e-15));
  CHECK(e[1] == doctest::Approx(std::exp(-0.5) - 1.0).epsilon(1e-15));
  CHECK(e[2] == 0.5);
  CHECK(e[3] == 2.0);
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 0.5);
  CHECK(r[3] == 2.0);
}

TEST_CASE("binary broadcast accepts scalars on either side") {
  Var t = Var::constant(Tensor({1, 2, 2}, {1, 2, 3, 4}));
  Var s = Var::scalar(10.0);
  CHECK(add(t, s).value()[3] == 14.0);
  CHECK(add(s, t).value()[0] == 11.0);
  CHECK(mul(s, t).value()[2] == 30.0);
  CHECK(div(t, Var::scalar(2.0)).value()[1] == 1.0);
  CHECK((2.0 - t).value()[0] == 1.0);
  CHECK((-t).value()[0] == -1.0);
  Var other = Var::constant(Tensor({2, 2}, 0.0));
  CHECK_THROWS_AS(add(t, other), std::invalid_argument);
}

TEST_CASE("domain guards") {
  Var z = Var::constant(Tensor({1, 1, 2}, {1.0, 0.0}));
  CHECK_THROWS_AS(div(Var::scalar(1.0), z), std::domain_error);
  CHECK_THROWS_AS(vlog(Var::constant(Tensor({1, 1, 1}, {-0.5}))), std::domain_error);
  CHECK_THROWS_AS(vsqrt(Var::scalar(-1.0)), std::domain_error);
}

TEST_CASE("gradients of smooth elementwise ops match finite differences") {
  const Tensor pos = random_tensor({1, 2, 3}, 7, 0.4, 1.6);
  const Tensor any = random_tensor({1, 2, 3}, 8, -1.2, 1.2);
  CHECK(unary_grad_error([](const Var& v) { return vlog(v); }, pos) < 1e-7);
  CHECK(unary_grad_error([](const Var& v) { return vexp(v); }, any) < 1e-7);
  CHECK(unary_grad_error([](const Var& v) { return sigmoid(v); }, any) < 1e-7);
  CHECK(unary_grad_error([](const Var& v) { return softplus(v); }, any) < 1e-7);
  CHECK(unary_grad_error([](const Var& v) { return vsqrt(v); }, pos) < 1e-7);
  CHECK(unary_grad_error([](const Var& v) { return square(v); }, any) < 1e-7);
  CHECK(unary_grad_error([](const Var& v) { return vpow(v, 2.5); }, pos) < 1e-7);
  CHECK(unary_grad_error([](const Var& v) { return neg(v); }, any) < 1e-9);
  // kinked maps probed away from their kink
  const Tensor off = random_tensor({1, 2, 3}, 9, 0.3, 1.4);
  CHECK(unary_grad_error([](const Var& v) { return vabs(v); }, off) < 1e-7);
  CHECK(unary_grad_error([](const Var& v) { return vabs(v); }, neg(Var::constant(off)).value()) <
        1e-7);
  CHECK(unary_grad_error([](const Var& v) { return relu(v); }, off) < 1e-7);
  CHECK(unary_grad_error([](const Var& v) { return elu(v); }, off) < 1e-7);
  CHECK(unary_grad_error([](const Var& v) { return elu(v); }, neg(Var::constant(off)).value()) <
        1e-7);
  CHECK(unary_grad_error([](const Var& v) { return clamp(v, -1.0, 1.0); }, off) < 1e-7);
}

TEST_CASE("clamp blocks gradient outside the window") {
  Var x = Var::param(Tensor({1, 1, 3}, {-2.0, 0.5, 2.0}));
  Var y = sum(clamp(x, -1.0, 1.0));
  backward(y);
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("map_unary applies the supplied derivative") {
  const Tensor x0 = random_tensor({1, 2, 2}, 13, 0.2, 1.3);
  const auto cube = [](const Var& v) {
    return map_unary(
        v, [](double t) { return t * t * t; }, [](double t) { return 3.0 * t * t; }, "cube");
  };
  CHECK(unary_grad_error(cube, x0) < 1e-7);
  Var x = Var::constant(x0);
  const Tensor y = cube(x).value();
  for (int i = 0; i < x0.size(); ++i)
    CHECK(y[i] == doctest::Approx(x0[i] * x0[i] * x0[i]).epsilon(1e-15));
}

TEST_CASE("binary op gradients match finite differences") {
  const Tensor a0 = random_tensor({2, 3}, 21, -1.0, 1.0);
  const Tensor b0 = random_tensor({2, 3}, 22, 0.4, 1.5);
  CHECK(binary_grad_error([](const Var& a, const Var& b) { return add(a, b); }, a0, b0) < 1e-7);
  CHECK(binary_grad_error([](const Var& a, const Var& b) { return sub(a, b); }, a0, b0) < 1e-7);
  CHECK(binary_grad_error([](const Var& a, const Var& b) { return mul(a, b); }, a0, b0) < 1e-7);
  CHECK(binary_grad_error([](const Var& a, const Var& b) { return div(a, b); }, a0, b0) < 1e-7);
  // scalar broadcast on either side
  const Tensor s0 = Tensor::scalar(0.7);
  CHECK(binary_grad_error([](const Var& a, const Var& b) { return mul(a, b); }, a0, s0) < 1e-7);
  CHECK(binary_grad_error([](const Var& a, const Var& b) { return div(a, b); }, s0, b0) < 1e-7);
  CHECK(binary_grad_error([](const Var& a, const Var& b) { return add(a, b); }, s0, b0) < 1e-7);
}

TEST_CASE("shared subexpressions accumulate gradient once per use") {
  Var x = Var::param(Tensor::scalar(0.8));
  // y = x^2 + 3x as a diamond: both branches share the leaf
  Var y = add(mul(x, x), mul(x, Var::scalar(3.0)));
  backward(y);
  CHECK(x.grad()[0] == doctest::Approx(2.0 * 0.8 + 3.0).epsilon(1e-14));

  const auto f = [&]() { return add(mul(x, x), mul(x, Var::scalar(3.0))); };
  CHECK(grad_check(f, {x}).max_rel_error < 1e-8);
}

TEST_CASE("backward is deterministic and resets between calls") {
  Var x = Var::param(random_tensor({1, 3, 3}, 31));
  Var y = mean(mul(sigmoid(x), x));
  const GradientMap g1 = backward(y);
  const GradientMap g2 = backward(y);
  REQUIRE(g1.size() == 1);
  REQUIRE(g2.size() == 1);
  const Tensor& t1 = g1.begin()->second;
  const Tensor& t2 = g2.begin()->second;
  for (int i = 0; i < t1.size(); ++i) CHECK(t1[i] == t2[i]);  // bit-identical
}

TEST_CASE("backward requires a scalar and ignores non-grad graphs") {
  Var x = Var::param(Tensor({1, 2, 2}, 1.0));
  CHECK_THROWS_AS(backward(add(x, x)), std::logic_error);
  CHECK(backward(mean(Var::constant(Tensor({1, 2, 2}, 1.0)))).empty());
}

TEST_CASE("leaf mutation contract") {
  Var x = Var::param(Tensor({1, 2, 2}, 1.0));
  Var y = add(x, x);
  CHECK_THROWS_AS(y.set_value(Tensor({1, 2, 2}, 0.0)), std::logic_error);
  CHECK_THROWS_AS(x.set_value(Tensor({2, 2}, 0.0)), std::logic_error);
  x.set_value(Tensor({1, 2, 2}, 2.0));
  CHECK(x.value()[0] == 2.0);
  CHECK_THROWS_AS(x.grad(), std::logic_error);  // no backward has run
}

TEST_CASE("reductions: values") {
  Var x = Var::constant(Tensor({2, 2}, {1, 2, 3, 4}));
  CHECK(sum(x).value()[0] == 10.0);
  CHECK(mean(x).value()[0] == 2.5);
  const Tensor sa = sum_along(x, 0).value();
  CHECK(sa[0] == 4.0);
  CHECK(sa[1] == 6.0);
  const Tensor ma = mean_along(x, 1).value();
  CHECK(ma[0] == 1.5);
  CHECK(ma[1] == 3.5);
  const Tensor mn = min_along(x, 0).value();
  CHECK(mn[0] == 1.0);
  CHECK(mn[1] == 2.0);
  const Tensor mx = max_along(x, 1).value();
  CHECK(mx[0] == 2.0);
  CHECK(mx[1] == 4.0);
}

TEST_CASE("reduction gradients match finite differences") {
  const Tensor x0 = random_tensor({3, 4}, 41, -1.0, 1.0);
  CHECK(unary_grad_error([](const Var& v) { return sum(v); }, x0) < 1e-8);
  CHECK(unary_grad_error([](const Var& v) { return mean(v); }, x0) < 1e-8);
  CHECK(unary_grad_error([](const Var& v) { return sum_along(v, 0); }, x0) < 1e-8);
  CHECK(unary_grad_error([](const Var& v) { return sum_along(v, 1); }, x0) < 1e-8);
  CHECK(unary_grad_error([](const Var& v) { return mean_along(v, 0); }, x0) < 1e-8);
  CHECK(unary_grad_error([](const Var& v) { return min_along(v, 0); }, x0) < 1e-7);
  CHECK(unary_grad_error([](const Var& v) { return max_along(v, 1); }, x0) < 1e-7);
}

TEST_CASE("min_along routes ties to the lowest index") {
  Var x = Var::param(Tensor({2, 2}, {0.5, 1.0, 0.5, 0.2}));  // column 0 ties
  backward(sum(min_along(x, 0)));
  CHECK(x.grad()[0] == 1.0);  // first occurrence wins
  CHECK(x.grad()[2] == 0.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[3] == 1.0);
}

TEST_CASE("median: value and subgradient") {
  SUBCASE("even count averages the two middle elements") {
    Var x = Var::param(Tensor({1, 1, 4}, {4.0, 1.0, 3.0, 2.0}));
    Var m = median(x);
    CHECK(m.value()[0] == 2.5);
    backward(m);
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 0.0);
    CHECK(x.grad()[2] == 0.5);  // 3.0 is the upper middle
    CHECK(x.grad()[3] == 0.5);  // 2.0 is the lower middle
  }
  SUBCASE("odd count routes the full gradient to the middle element") {
    Var x = Var::param(Tensor({3}, {4.0, 1.0, 3.0}));
    Var m = median(x);
    CHECK(m.value()[0] == 3.0);
    backward(m);
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 0.0);
    CHECK(x.grad()[2] == 1.0);
  }
}

TEST_CASE("structural ops: values and gradients") {
  const Tensor x0 = random_tensor({2, 3, 4}, 51);
  Var x = Var::constant(x0);

  const Tensor r = reshape(x, {6, 4}).value();
  for (int i = 0; i < r.size(); ++i) CHECK(r[i] == x0[i]);
  CHECK_THROWS_AS(reshape(x, {5, 4}), std::invalid_argument);

  const Tensor sl = slice(x, 0, 1, 1).value();
  CHECK(sl.shape() == Shape{1, 3, 4});
  for (int i = 0; i < 12; ++i) CHECK(sl[i] == x0[12 + i]);
  const Tensor sy = slice(x, 1, 1, 2).value();
  CHECK(sy.shape() == Shape{2, 2, 4});
  CHECK(sy.at(1, 0, 2) == x0.at(1, 1, 2));

  Var a = Var::constant(Tensor({2, 2}, {1, 2, 3, 4}));
  Var b = Var::constant(Tensor({2, 2}, {5, 6, 7, 8}));
  const Tensor st = stack({a, b}).value();
  CHECK(st.shape() == Shape{2, 2, 2});
  CHECK(st[0] == 1.0);
  CHECK(st[4] == 5.0);

  CHECK(unary_grad_error([](const Var& v) { return reshape(v, {4, 6}); }, x0) < 1e-8);
  CHECK(unary_grad_error([](const Var& v) { return slice(v, 2, 1, 2); }, x0) < 1e-8);
  CHECK(binary_grad_error([](const Var& p, const Var& q) { return stack({p, q}); },
                          random_tensor({2, 2}, 52), random_tensor({2, 2}, 53)) < 1e-8);
}

TEST_CASE("matmul against a direct triple loop") {
  const Tensor a0 = random_tensor({3, 4}, 61);
  const Tensor b0 = random_tensor({4, 2}, 62);
  const Tensor c = matmul(Var::constant(a0), Var::constant(b0)).value();
  REQUIRE(c.shape() == Shape{3, 2});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += a0[i * 4 + k] * b0[k * 2 + j];
      CHECK(c[i * 2 + j] == doctest::Approx(acc).epsilon(1e-14));
    }
  CHECK(binary_grad_error([](const Var& p, const Var& q) { return matmul(p, q); }, a0, b0) < 1e-7);
  CHECK_THROWS_AS(matmul(Var::constant(a0), Var::constant(a0)), std::invalid_argument);

  const Tensor t = transpose2d(Var::constant(a0)).value();
  CHECK(t.shape() == Shape{4, 3});
  CHECK(t[1 * 3 + 2] == a0[2 * 4 + 1]);
  CHECK(unary_grad_error([](const Var& v) { return transpose2d(v); }, a0) < 1e-8);
}

TEST_CASE("channel_bias") {
  const Tensor x0 = random_tensor({3, 2, 2}, 71);
  const Tensor b0 = random_tensor({3}, 72);
  const Tensor y = channel_bias(Var::constant(x0), Var::constant(b0)).value();
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 4; ++i) CHECK(y[c * 4 + i] == x0[c * 4 + i] + b0[c]);
  CHECK(binary_grad_error([](const Var& p, const Var& q) { return channel_bias(p, q); }, x0, b0) <
        1e-7);
}

namespace {

// Brute-force convolution oracle with explicit coordinate padding.
Tensor conv_oracle(const Tensor& x, const Tensor& k, int stride, int pad, PadMode mode) {
  const int in_ch = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int out_ch = k.dim(0), ks = k.dim(2);
  const int oh = (h + 2 * pad - ks) / stride + 1;
  const int ow = (w + 2 * pad - ks) / stride + 1;
  const auto sample = [&](int c, int y, int xx) -> double {
    if (mode == PadMode::Zero) {
      if (y < 0 || y >= h || xx < 0 || xx >= w) return 0.0;
    } else if (mode == PadMode::ClampEdge) {
      y = std::min(std::max(y, 0), h - 1);
      xx = std::min(std::max(xx, 0), w - 1);
    } else {  // reflect without repeating the border sample
      if (y < 0) y = -y;
      if (y >= h) y = 2 * h - 2 - y;
      if (xx < 0) xx = -xx;
      if (xx >= w) xx = 2 * w - 2 - xx;
    }
    return x.at(c, y, xx);
  };
  Tensor out({out_ch, oh, ow});
  for (int o = 0; o < out_ch; ++o)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        double acc = 0.0;
        for (int c = 0; c < in_ch; ++c)
          for (int dy = 0; dy < ks; ++dy)
            for (int dx = 0; dx < ks; ++dx)
              acc += sample(c, y * stride - pad + dy, xx * stride - pad + dx) *
                     k[((o * in_ch + c) * ks + dy) * ks + dx];
        out.at(o, y, xx) = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("conv2d matches the brute-force oracle in every mode") {
  const Tensor x0 = random_tensor({2, 6, 7}, 81);
  const Tensor k0 = random_tensor({3, 2, 3, 3}, 82);
  for (PadMode mode : {PadMode::Zero, PadMode::Reflect, PadMode::ClampEdge}) {
    for (int stride : {1, 2}) {
      const Tensor got =
          conv2d(Var::constant(x0), Var::constant(k0), stride, 1, mode).value();
      const Tensor want = conv_oracle(x0, k0, stride, 1, mode);
      REQUIRE(same_shape(got.shape(), want.shape()));
      for (int i = 0; i < got.size(); ++i)
        CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-13));
    }
  }
  // 5x5 kernel with pad 2 keeps the size
  const Tensor k5 = random_tensor({1, 2, 5, 5}, 83);
  const Tensor got = conv2d(Var::constant(x0), Var::constant(k5), 1, 2, PadMode::Zero).value();
  CHECK(got.shape() == Shape{1, 6, 7});
  const Tensor want = conv_oracle(x0, k5, 1, 2, PadMode::Zero);
  for (int i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-13));
}

TEST_CASE("conv2d gradients match finite differences") {
  const Tensor x0 = random_tensor({2, 5, 5}, 84);
  const Tensor k0 = random_tensor({2, 2, 3, 3}, 85);
  for (PadMode mode : {PadMode::Zero, PadMode::Reflect, PadMode::ClampEdge}) {
    CHECK(binary_grad_error(
              [mode](const Var& x, const Var& k) { return conv2d(x, k, 1, 1, mode); }, x0, k0) <
          1e-6);
  }
  CHECK(binary_grad_error(
            [](const Var& x, const Var& k) { return conv2d(x, k, 2, 1, PadMode::Zero); }, x0,
            k0) < 1e-6);
}

TEST_CASE("conv2d input validation") {
  Var x = Var::constant(Tensor({2, 4, 4}, 1.0));
  CHECK_THROWS_AS(conv2d(x, Var::constant(Tensor({1, 3, 3, 3}, 1.0)), 1, 1, PadMode::Zero),
                  std::invalid_argument);  // channel mismatch
  CHECK_THROWS_AS(conv2d(x, Var::constant(Tensor({1, 2, 2, 2}, 1.0)), 1, 1, PadMode::Zero),
                  std::invalid_argument);  // even kernel
  CHECK_THROWS_AS(conv2d(x, Var::constant(Tensor({1, 2, 3, 3}, 1.0)), 1, 5, PadMode::Reflect),
                  std::invalid_argument);  // reflect pad too large
}

TEST_CASE("pixel_shuffle layout and round trip") {
  // 4 channels, 1x2 -> 1 channel, 2x4
  Tensor x0({4, 1, 2});
  for (int i = 0; i < 8; ++i) x0[i] = i;  // ch c holds {2c, 2c+1}
  const Tensor y = pixel_shuffle(Var::constant(x0), 2).value();
  REQUIRE(y.shape() == Shape{1, 2, 4});
  // out(0, dy, 2*x+dx) = in(dy*2+dx, 0, x)
  CHECK(y.at(0, 0, 0) == 0.0);
  CHECK(y.at(0, 0, 1) == 2.0);
  CHECK(y.at(0, 1, 0) == 4.0);
  CHECK(y.at(0, 1, 1) == 6.0);
  CHECK(y.at(0, 0, 2) == 1.0);
  CHECK(y.at(0, 1, 3) == 7.0);

  const Tensor big = random_tensor({8, 3, 5}, 91);
  const Tensor back =
      pixel_unshuffle(pixel_shuffle(Var::constant(big), 2), 2).value();
  for (int i = 0; i < big.size(); ++i) CHECK(back[i] == big[i]);

  CHECK(unary_grad_error([](const Var& v) { return pixel_shuffle(v, 2); }, big) < 1e-8);
  CHECK(unary_grad_error([](const Var& v) { return pixel_unshuffle(v, 3); },
                         random_tensor({1, 6, 9}, 92)) < 1e-8);
  CHECK_THROWS_AS(pixel_shuffle(Var::constant(Tensor({3, 2, 2}, 1.0)), 2),
                  std::invalid_argument);
}

TEST_CASE("bilinear_sample agrees with the value-level lookup") {
  const Tensor src = random_tensor({2, 5, 6}, 101);
  Tensor grid({2, 3, 3});
  std::mt19937_64 rng(102);
  std::uniform_real_distribution<double> gx(-1.0, 6.5), gy(-1.0, 5.5);
  for (int i = 0; i < 9; ++i) {
    grid[i] = gx(rng);       // x channel
    grid[9 + i] = gy(rng);   // y channel
  }
  const Tensor out = bilinear_sample(Var::constant(src), Var::constant(grid)).value();
  REQUIRE(out.shape() == Shape{2, 3, 3});
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 9; ++i) {
      const double expect = bilinear_at(src, c, grid[i], grid[9 + i]);
      CHECK(out[c * 9 + i] == doctest::Approx(expect).epsilon(1e-14));
    }
}

TEST_CASE("bilinear_sample gradients match finite differences inside the image") {
  const Tensor src = random_tensor({2, 5, 6}, 103);
  // keep probe positions away from integer grid lines where the sampler kinks
  Tensor grid({2, 2, 3});
  const double xs[6] = {0.31, 1.72, 3.47, 2.18, 4.63, 0.86};
  const double ys[6] = {0.42, 2.57, 3.38, 1.23, 2.81, 3.64};
  for (int i = 0; i < 6; ++i) {
    grid[i] = xs[i];
    grid[6 + i] = ys[i];
  }
  CHECK(binary_grad_error(
            [](const Var& s, const Var& g) { return bilinear_sample(s, g); }, src, grid) < 1e-6);
}

TEST_CASE("bilinear_sample zeroes the grid gradient where coordinates clamp") {
  const Tensor src = random_tensor({1, 4, 4}, 104);
  Var grid = Var::param(Tensor({2, 1, 2}, {-2.0, 1.4, 1.5, 0.5}));  // x=-2 clamps, x=1.4 interior
  Var out = bilinear_sample(Var::constant(src), grid);
  backward(sum(out));
  CHECK(grid.grad()[0] == 0.0);        // clamped x
  CHECK(grid.grad()[1] != 0.0);        // interior x
  CHECK_THROWS_AS(
      bilinear_sample(Var::constant(src),
                      Var::constant(Tensor({2, 1, 1}, {std::nan(""), 0.0}))),
      std::domain_error);
}

TEST_CASE("resize_bilinear identity and oracle") {
  const Tensor x0 = random_tensor({2, 4, 6}, 111);
  const Tensor same = resize_bilinear(Var::constant(x0), 4, 6).value();
  for (int i = 0; i < x0.size(); ++i) CHECK(same[i] == x0[i]);

  // oracle with half-pixel centers and edge clamping
  const int oh = 2, ow = 3;
  const Tensor got = resize_bilinear(Var::constant(x0), oh, ow).value();
  REQUIRE(got.shape() == Shape{2, oh, ow});
  const double sy = 4.0 / oh, sx = 6.0 / ow;
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        const double srcy = (y + 0.5) * sy - 0.5;
        const double srcx = (x + 0.5) * sx - 0.5;
        CHECK(got.at(c, y, x) ==
              doctest::Approx(bilinear_at(x0, c, srcx, srcy)).epsilon(1e-14));
      }

  CHECK(unary_grad_error([](const Var& v) { return resize_bilinear(v, 8, 12); }, x0) < 1e-7);
  CHECK(unary_grad_error([](const Var& v) { return resize_bilinear(v, 2, 3); }, x0) < 1e-7);
}

TEST_CASE("grad_check rejects non-finite objectives") {
  Var x = Var::param(Tensor::scalar(0.5));
  const auto f = [&]() { return Var::constant(Tensor::scalar(std::nan(""))) * x; };
  CHECK_THROWS_AS(grad_check(f, {x}), std::domain_error);
}

TEST_CASE("a long composite pipeline gradient stays tight") {
  const Tensor x0 = random_tensor({3, 6, 6}, 121, 0.1, 0.9);
  const Tensor k0 = random_tensor({4, 3, 3, 3}, 122, -0.4, 0.4);
  Var x = Var::param(x0);
  Var k = Var::param(k0);
  const auto f = [&]() {
    Var c = conv2d(x, k, 1, 1, PadMode::Reflect);
    Var e = elu(c);
    Var p = pixel_shuffle(e, 2);
    Var r = resize_bilinear(p, 6, 6);
    return mean(square(sigmoid(r) - 0.3));
  };
  // The conv output crosses the elu kink, so allow ordinary central-difference
  // truncation noise; per-op checks above hold the tight tolerances.
  CHECK(grad_check(f, {x, k}).max_rel_error < 1e-4);
}
