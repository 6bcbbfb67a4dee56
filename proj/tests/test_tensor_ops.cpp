#include <doctest.h>

#include <random>
#include <stdexcept>

#include "photosfm/tensor.hpp"

using namespace photosfm;

TEST_CASE("shape helpers") {
  CHECK(shape_size({3, 4, 5}) == 60);
  CHECK(shape_size({1}) == 1);
  CHECK(same_shape({2, 3}, {2, 3}));
  CHECK_FALSE(same_shape({2, 3}, {3, 2}));
  CHECK_FALSE(same_shape({2, 3}, {2, 3, 1}));
  CHECK(shape_str({2, 3}) == "(2,3)");
}

TEST_CASE("tensor construction and fill") {
  Tensor z({2, 3});
  CHECK(z.size() == 6);
  for (int i = 0; i < z.size(); ++i) CHECK(z[i] == 0.0);

  Tensor f({2, 2}, 1.5);
  for (int i = 0; i < f.size(); ++i) CHECK(f[i] == 1.5);

  Tensor v({2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(v[0] == 1.0);
  CHECK(v[3] == 4.0);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), std::invalid_argument);

  Tensor s = Tensor::scalar(7.0);
  CHECK(s.size() == 1);
  CHECK(s.shape() == Shape{1});
  CHECK(s[0] == 7.0);
}

TEST_CASE("rank-3 indexing is row-major CHW") {
  Tensor t({2, 3, 4});
  t.at(1, 2, 3) = 9.0;
  // channel stride 12, row stride 4
  CHECK(t[1 * 12 + 2 * 4 + 3] == 9.0);
  t.at(0, 0, 1) = 5.0;
  CHECK(t[1] == 5.0);
}

TEST_CASE("statistics") {
  Tensor t({1, 2, 2}, {1.0, -2.0, 3.0, 6.0});
  CHECK(t.sum() == 8.0);
  CHECK(t.mean() == 2.0);
  CHECK(t.min_value() == -2.0);
  CHECK(t.max_value() == 6.0);
  CHECK(t.all_finite());
  t[2] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(t.all_finite());
  t[2] = std::numeric_limits<double>::infinity();
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("bilinear_at interpolates and clamps at the border") {
  // 1x2x2 image: values 1 2 / 3 4
  Tensor img({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(bilinear_at(img, 0, 0.0, 0.0) == 1.0);
  CHECK(bilinear_at(img, 0, 1.0, 1.0) == 4.0);
  CHECK(bilinear_at(img, 0, 0.5, 0.0) == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(bilinear_at(img, 0, 0.5, 0.5) == doctest::Approx(2.5).epsilon(1e-15));
  // outside the image: clamp to edge
  CHECK(bilinear_at(img, 0, -3.0, 0.0) == 1.0);
  CHECK(bilinear_at(img, 0, 5.0, 5.0) == 4.0);
  CHECK(bilinear_at(img, 0, 0.5, 9.0) == doctest::Approx(3.5).epsilon(1e-15));
}

TEST_CASE("bilinear_at against a direct four-corner oracle") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor img({2, 5, 7});
  for (int i = 0; i < img.size(); ++i) img[i] = u(rng);

  std::uniform_real_distribution<double> px(0.0, 6.0), py(0.0, 4.0);
  for (int trial = 0; trial < 200; ++trial) {
    const double x = px(rng), y = py(rng);
    const int c = trial % 2;
    const int x0 = std::min(static_cast<int>(x), 5), y0 = std::min(static_cast<int>(y), 3);
    const double fx = x - x0, fy = y - y0;
    const double expect = (1 - fy) * ((1 - fx) * img.at(c, y0, x0) + fx * img.at(c, y0, x0 + 1)) +
                          fy * ((1 - fx) * img.at(c, y0 + 1, x0) + fx * img.at(c, y0 + 1, x0 + 1));
    CHECK(bilinear_at(img, c, x, y) == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("median_of") {
  CHECK(median_of({3.0}) == 3.0);
  CHECK(median_of({5.0, 1.0, 3.0}) == 3.0);
  CHECK(median_of({4.0, 1.0, 3.0, 2.0}) == 2.5);
  CHECK(median_of({1.0, 1.0, 8.0}) == 1.0);
  CHECK_THROWS_AS(median_of({}), std::domain_error);
}
