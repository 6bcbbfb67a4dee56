#include <doctest.h>

#include <cmath>
#include <random>

#include "photosfm/metrics.hpp"

using namespace photosfm;

namespace {

RigidTransform random_rigid(std::mt19937_64& rng, double rot_amp, double trans_amp) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Eigen::Vector3d axis(u(rng), u(rng), u(rng));
  const Eigen::Vector3d t(trans_amp * u(rng), trans_amp * u(rng), trans_amp * u(rng));
  return RigidTransform::from_axis_angle(rot_amp * axis, t);
}

// Independent trajectory-error reference built directly on Eigen affine
// transforms, kept free of any library pose helpers.
double ate_reference(const std::vector<RigidTransform>& pred_rel,
                     const std::vector<RigidTransform>& gt_rel) {
  const size_t n = pred_rel.size();
  std::vector<Eigen::Vector3d> p, g;
  Eigen::Matrix4d P = Eigen::Matrix4d::Identity(), G = Eigen::Matrix4d::Identity();
  p.push_back(Eigen::Vector3d::Zero());
  g.push_back(Eigen::Vector3d::Zero());
  for (size_t i = 0; i < n; ++i) {
    Eigen::Matrix4d Tp = Eigen::Matrix4d::Identity(), Tg = Eigen::Matrix4d::Identity();
    Tp.topLeftCorner<3, 3>() = pred_rel[i].R;
    Tp.topRightCorner<3, 1>() = pred_rel[i].t;
    Tg.topLeftCorner<3, 3>() = gt_rel[i].R;
    Tg.topRightCorner<3, 1>() = gt_rel[i].t;
    P = P * Tp;
    G = G * Tg;
    p.push_back(P.topRightCorner<3, 1>());
    g.push_back(G.topRightCorner<3, 1>());
  }
  double dot = 0.0, nrm = 0.0;
  for (size_t i = 0; i <= n; ++i) {
    dot += p[i].dot(g[i]);
    nrm += p[i].squaredNorm();
  }
  const double s = nrm > 0.0 ? dot / nrm : 1.0;
  double acc = 0.0;
  for (size_t i = 0; i <= n; ++i) acc += (s * p[i] - g[i]).squaredNorm();
  return std::sqrt(acc / static_cast<double>(n + 1));
}

}  // namespace

TEST_CASE("median_scale matches the gt/pred median ratio") {
  Tensor pred({5});
  Tensor gt({5});
  Tensor mask({5});
  const double pv[5] = {1.0, 3.0, 2.0, 9.0, 4.0};
  const double gv[5] = {2.0, 6.0, 4.0, 1.0, 8.0};
  for (int i = 0; i < 5; ++i) {
    pred[i] = pv[i];
    gt[i] = gv[i];
    mask[i] = 1.0;
  }
  // medians over all five: pred 3, gt 4 -> ratio 4/3.
  MedianScaleResult r = median_scale(pred, gt, mask);
  CHECK(r.ratio == doctest::Approx(4.0 / 3.0).epsilon(1e-15));
  for (int i = 0; i < 5; ++i) CHECK(r.scaled[i] == doctest::Approx(pred[i] * r.ratio).epsilon(1e-15));

  // Masking one pixel leaves an even count: middle pair is averaged.
  mask[3] = 0.0;  // drop pred 9 / gt 1
  r = median_scale(pred, gt, mask);
  CHECK(r.ratio == doctest::Approx(5.0 / 2.5).epsilon(1e-15));

  Tensor empty_mask({5});
  CHECK_THROWS_AS(median_scale(pred, gt, empty_mask), std::domain_error);

  Tensor neg = pred;
  for (int i = 0; i < 5; ++i) neg[i] = -1.0;
  CHECK_THROWS_AS(median_scale(neg, gt, mask), std::domain_error);

  Tensor short_gt({4});
  CHECK_THROWS_AS(median_scale(pred, short_gt, mask), std::invalid_argument);
}

TEST_CASE("depth metrics reproduce the two-pixel example exactly") {
  Tensor pred({2});
  Tensor gt({2});
  pred[0] = 2.0;
  pred[1] = 4.0;
  gt[0] = 1.0;
  gt[1] = 4.0;
  const DepthEvalResult r = depth_metrics(pred, gt, 80.0, /*use_median_scaling=*/false);
  CHECK(r.abs_rel == 0.5);
  CHECK(r.sq_rel == 0.5);
  CHECK(r.rmse == std::sqrt(0.5));
  CHECK(r.rmse_log == std::sqrt(0.5 * std::log(2.0) * std::log(2.0)));
  CHECK(r.delta1 == 0.5);
  CHECK(r.delta2 == 0.5);
  CHECK(r.delta3 == 0.5);
  CHECK(r.valid_count == 2);
  CHECK(r.scale_ratio == 1.0);
}

TEST_CASE("median scaling makes the metrics scale-invariant") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.5, 20.0);
  Tensor pred({1, 6, 7});
  Tensor gt({1, 6, 7});
  for (int i = 0; i < pred.size(); ++i) {
    pred[i] = u(rng);
    gt[i] = u(rng);
  }
  gt[5] = 0.0;     // invalid: below the floor
  gt[11] = 200.0;  // invalid: above the cap

  const DepthEvalResult base = depth_metrics(pred, gt, 80.0, true);
  CHECK(base.valid_count == pred.size() - 2);
  for (double c : {0.037, 3.7, 512.0}) {
    Tensor scaled = pred;
    for (int i = 0; i < scaled.size(); ++i) scaled[i] *= c;
    const DepthEvalResult r = depth_metrics(scaled, gt, 80.0, true);
    CHECK(std::abs(r.abs_rel - base.abs_rel) < 1e-10);
    CHECK(std::abs(r.sq_rel - base.sq_rel) < 1e-10);
    CHECK(std::abs(r.rmse - base.rmse) < 1e-10);
    CHECK(std::abs(r.rmse_log - base.rmse_log) < 1e-10);
    CHECK(r.delta1 == base.delta1);
    CHECK(r.delta2 == base.delta2);
    CHECK(r.delta3 == base.delta3);
    CHECK(r.scale_ratio == doctest::Approx(base.scale_ratio / c).epsilon(1e-12));
  }

  // Without median scaling a global rescale is visible in the errors.
  const DepthEvalResult raw = depth_metrics(pred, gt, 80.0, false);
  Tensor off = pred;
  for (int i = 0; i < off.size(); ++i) off[i] *= 3.0;
  const DepthEvalResult off_r = depth_metrics(off, gt, 80.0, false);
  CHECK(off_r.abs_rel != doctest::Approx(raw.abs_rel).epsilon(1e-6));
}

TEST_CASE("depth metrics validate their inputs") {
  Tensor pred({2});
  Tensor gt({3});
  CHECK_THROWS_AS(depth_metrics(pred, gt), std::invalid_argument);

  Tensor gt2({2});  // all zero: nothing valid
  Tensor pred2({2});
  pred2[0] = pred2[1] = 1.0;
  CHECK_THROWS_AS(depth_metrics(pred2, gt2), std::domain_error);
  CHECK_THROWS_AS(depth_metrics(pred2, pred2, 1e-4), std::invalid_argument);
}

TEST_CASE("predictions are clamped into the evaluation range") {
  Tensor pred({3});
  Tensor gt({3});
  pred[0] = 1e-9;  // clamps to 1e-3
  pred[1] = 500.0;  // clamps to the cap
  pred[2] = 2.0;
  gt[0] = 1e-3 * 1.2;
  gt[1] = 80.0;
  gt[2] = 2.0;
  const DepthEvalResult r = depth_metrics(pred, gt, 80.0, false);
  const double e0 = std::fabs(1e-3 - gt[0]) / gt[0];
  CHECK(r.abs_rel == doctest::Approx(e0 / 3.0).epsilon(1e-12));
}

TEST_CASE("trajectory error is zero when predictions equal ground truth") {
  std::mt19937_64 rng(23);
  std::vector<RigidTransform> rel;
  for (int i = 0; i < 5; ++i) rel.push_back(random_rigid(rng, 0.2, 0.5));
  CHECK(snippet_ate(rel, rel) == 0.0);
  CHECK(snippet_ate(rel, rel, /*per_pair=*/true) == 0.0);
}

TEST_CASE("global translation scale is removed by the alignment fit") {
  std::mt19937_64 rng(29);
  for (double s : {0.1, 7.0, 123.0}) {
    std::vector<RigidTransform> gt_rel, pred_rel;
    for (int i = 0; i < 5; ++i) {
      const RigidTransform g = random_rigid(rng, 0.3, 1.0);
      gt_rel.push_back(g);
      pred_rel.push_back(RigidTransform{g.R, s * g.t});
    }
    CHECK(snippet_ate(pred_rel, gt_rel) < 1e-12);
    CHECK(snippet_ate(pred_rel, gt_rel, true) < 1e-12);
  }
}

TEST_CASE("snippet error matches an independent reference on random snippets") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<RigidTransform> pred_rel, gt_rel;
    const int len = 2 + static_cast<int>(rng() % 5);
    for (int i = 0; i < len; ++i) {
      gt_rel.push_back(random_rigid(rng, 0.25, 1.0));
      pred_rel.push_back(random_rigid(rng, 0.25, 1.0));
    }
    const double got = snippet_ate(pred_rel, gt_rel);
    const double want = ate_reference(pred_rel, gt_rel);
    CHECK(std::abs(got - want) < 1e-12);
  }
}

TEST_CASE("degenerate and invalid snippets") {
  std::vector<RigidTransform> empty;
  CHECK_THROWS_AS(snippet_ate(empty, empty), std::invalid_argument);

  std::mt19937_64 rng(37);
  std::vector<RigidTransform> a = {random_rigid(rng, 0.1, 1.0)};
  std::vector<RigidTransform> b = {random_rigid(rng, 0.1, 1.0), random_rigid(rng, 0.1, 1.0)};
  CHECK_THROWS_AS(snippet_ate(a, b), std::invalid_argument);

  // Zero predicted motion: the scale fit falls back to 1 and the error is
  // the ground-truth position spread.
  std::vector<RigidTransform> still = {RigidTransform::identity(), RigidTransform::identity()};
  std::vector<RigidTransform> gt_rel;
  gt_rel.push_back(RigidTransform{Eigen::Matrix3d::Identity(), Eigen::Vector3d(1, 0, 0)});
  gt_rel.push_back(RigidTransform{Eigen::Matrix3d::Identity(), Eigen::Vector3d(1, 0, 0)});
  const double want = std::sqrt((0.0 + 1.0 + 4.0) / 3.0);
  CHECK(snippet_ate(still, gt_rel) == doctest::Approx(want).epsilon(1e-15));
}

TEST_CASE("aggregation reports mean and population spread") {
  const std::vector<double> errs = {0.1, 0.4, 0.3, 0.2};
  const AteResult r = aggregate_ate(errs);
  CHECK(r.snippet_count == 4);
  const double mean = (0.1 + 0.4 + 0.3 + 0.2) / 4.0;
  double var = 0.0;
  for (double e : errs) var += (e - mean) * (e - mean);
  CHECK(r.mean == doctest::Approx(mean).epsilon(1e-15));
  CHECK(r.stddev == doctest::Approx(std::sqrt(var / 4.0)).epsilon(1e-15));

  const AteResult single = aggregate_ate({0.25});
  CHECK(single.mean == 0.25);
  CHECK(single.stddev == 0.0);

  CHECK_THROWS_AS(aggregate_ate({}), std::domain_error);
}

TEST_CASE("intrinsics report aggregates per-quantity statistics") {
  IntrinsicsValues a{0.50, 0.60, 0.48, 0.52};
  IntrinsicsValues b{0.54, 0.58, 0.50, 0.54};
  IntrinsicsValues gt{0.52, 0.59, 0.49, 0.53};
  const IntrinsicsReport rep = intrinsics_report({a, b}, gt);
  CHECK(rep.count == 2);
  CHECK(rep.fx.mean == doctest::Approx(0.52).epsilon(1e-15));
  CHECK(rep.fx.stddev == doctest::Approx(0.02).epsilon(1e-12));
  CHECK(rep.cy.mean == doctest::Approx(0.53).epsilon(1e-15));
  CHECK(rep.gt.fx == 0.52);

  const std::string text = rep.format();
  CHECK(text.find("fx") != std::string::npos);
  CHECK(text.find("fy") != std::string::npos);
  CHECK(text.find("cx") != std::string::npos);
  CHECK(text.find("cy") != std::string::npos);
  CHECK(text.find("0.52") != std::string::npos);

  CHECK_THROWS_AS(intrinsics_report({}, gt), std::invalid_argument);
}
