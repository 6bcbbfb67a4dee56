#include "photosfm/camera.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace photosfm {

RigidTransform RigidTransform::from_axis_angle(const Eigen::Vector3d& omega,
                                               const Eigen::Vector3d& t) {
  RigidTransform out;
  const double angle = omega.norm();
  if (angle > 0.0)
    out.R = Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
  out.t = t;
  return out;
}

RigidTransform RigidTransform::compose(const RigidTransform& other) const {
  RigidTransform out;
  out.R = R * other.R;
  out.t = R * other.t + t;
  return out;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform out;
  out.R = R.transpose();
  out.t = -(out.R * t);
  return out;
}

namespace {

double softplus_value(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

// Rodrigues coefficients as smooth functions of s = |omega|^2, with series
// expansions where the closed forms lose precision.
double rot_coef_a(double s) {
  if (s < 1e-8) return 1.0 - s / 6.0 + s * s / 120.0;
  const double th = std::sqrt(s);
  return std::sin(th) / th;
}

double rot_coef_a_ds(double s) {
  if (s < 1e-8) return -1.0 / 6.0 + s / 60.0 - s * s / 1680.0;
  const double th = std::sqrt(s);
  return (th * std::cos(th) - std::sin(th)) / (2.0 * th * th * th);
}

double rot_coef_b(double s) {
  if (s < 1e-8) return 0.5 - s / 24.0 + s * s / 720.0;
  return (1.0 - std::cos(std::sqrt(s))) / s;
}

double rot_coef_b_ds(double s) {
  if (s < 1e-8) return -1.0 / 24.0 + s / 360.0 - s * s / 13440.0;
  const double th = std::sqrt(s);
  return (th * std::sin(th) - 2.0 * (1.0 - std::cos(th))) / (2.0 * s * s);
}

// The nine entries of exp([omega]_x), row-major.
std::array<Var, 9> rotation_entries(const Var& omega) {
  if (omega.shape() != Shape{3}) throw std::invalid_argument("so3_exp: omega must have shape (3)");
  const Var wx = slice(omega, 0, 0, 1);
  const Var wy = slice(omega, 0, 1, 1);
  const Var wz = slice(omega, 0, 2, 1);
  const Var s = wx * wx + wy * wy + wz * wz;
  const Var a = map_unary(s, rot_coef_a, rot_coef_a_ds, "rot_coef_a");
  const Var b = map_unary(s, rot_coef_b, rot_coef_b_ds, "rot_coef_b");
  return {
      1.0 - b * (wy * wy + wz * wz), b * (wx * wy) - a * wz, b * (wx * wz) + a * wy,
      b * (wx * wy) + a * wz, 1.0 - b * (wx * wx + wz * wz), b * (wy * wz) - a * wx,
      b * (wx * wz) - a * wy, b * (wy * wz) + a * wx, 1.0 - b * (wx * wx + wy * wy),
  };
}

}  // namespace

IntrinsicsValues Intrinsics::normalized() const {
  IntrinsicsValues k;
  k.fx = softplus_value(raw_fx.value()[0]);
  k.fy = softplus_value(raw_fy.value()[0]);
  k.cx = cx.value()[0];
  k.cy = cy.value()[0];
  return k;
}

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw std::domain_error("softplus_inverse: input must be positive");
  // log(exp(y) - 1), written to stay accurate for small and large y alike.
  return y + std::log(-std::expm1(-y));
}

Intrinsics init_intrinsics(bool requires_grad) {
  return intrinsics_from_normalized(IntrinsicsValues{}, requires_grad);
}

Intrinsics intrinsics_from_normalized(const IntrinsicsValues& k, bool requires_grad) {
  Intrinsics out;
  out.raw_fx = Var::leaf(Tensor::scalar(softplus_inverse(k.fx)), requires_grad);
  out.raw_fy = Var::leaf(Tensor::scalar(softplus_inverse(k.fy)), requires_grad);
  out.cx = Var::leaf(Tensor::scalar(k.cx), requires_grad);
  out.cy = Var::leaf(Tensor::scalar(k.cy), requires_grad);
  return out;
}

Var intrinsics_matrix(const Intrinsics& k, int width, int height) {
  if (width < 1 || height < 1) throw std::invalid_argument("intrinsics_matrix: bad image size");
  const Var zero = Var::scalar(0.0);
  const Var one = Var::scalar(1.0);
  const Var fx = k.fx() * static_cast<double>(width);
  const Var fy = k.fy() * static_cast<double>(height);
  const Var cx = k.cx * static_cast<double>(width);
  const Var cy = k.cy * static_cast<double>(height);
  return reshape(stack({fx, zero, cx, zero, fy, cy, zero, zero, one}), {3, 3});
}

Var intrinsics_inverse_matrix(const Intrinsics& k, int width, int height) {
  if (width < 1 || height < 1) throw std::invalid_argument("intrinsics_inverse_matrix: bad image size");
  const Var zero = Var::scalar(0.0);
  const Var one = Var::scalar(1.0);
  const Var fx = k.fx() * static_cast<double>(width);
  const Var fy = k.fy() * static_cast<double>(height);
  const Var cx = k.cx * static_cast<double>(width);
  const Var cy = k.cy * static_cast<double>(height);
  const Var ifx = 1.0 / fx;
  const Var ify = 1.0 / fy;
  return reshape(stack({ifx, zero, neg(cx * ifx), zero, ify, neg(cy * ify), zero, zero, one}),
                 {3, 3});
}

PoseSE3 PoseSE3::identity(bool requires_grad) {
  return from_values(Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero(), requires_grad);
}

PoseSE3 PoseSE3::from_values(const Eigen::Vector3d& omega, const Eigen::Vector3d& t,
                             bool requires_grad) {
  PoseSE3 out;
  out.omega = Var::leaf(Tensor({3}, {omega.x(), omega.y(), omega.z()}), requires_grad);
  out.t = Var::leaf(Tensor({3}, {t.x(), t.y(), t.z()}), requires_grad);
  return out;
}

RigidTransform PoseSE3::values() const {
  const Tensor& w = omega.value();
  const Tensor& tv = t.value();
  return RigidTransform::from_axis_angle(Eigen::Vector3d(w[0], w[1], w[2]),
                                         Eigen::Vector3d(tv[0], tv[1], tv[2]));
}

Var so3_exp(const Var& omega) {
  auto e = rotation_entries(omega);
  return reshape(stack(std::vector<Var>(e.begin(), e.end())), {3, 3});
}

WarpField warp_grid(const Var& depth, const Intrinsics& k, const PoseSE3& pose, int width,
                    int height) {
  if (depth.shape() != Shape{1, height, width})
    throw std::invalid_argument("warp_grid: depth must be (1,H,W) matching the image size");

  const Var fx = k.fx() * static_cast<double>(width);
  const Var fy = k.fy() * static_cast<double>(height);
  const Var cx = k.cx * static_cast<double>(width);
  const Var cy = k.cy * static_cast<double>(height);

  Tensor ut({1, height, width}), vt({1, height, width});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      ut.at(0, y, x) = static_cast<double>(x);
      vt.at(0, y, x) = static_cast<double>(y);
    }
  const Var u = Var::constant(std::move(ut));
  const Var v = Var::constant(std::move(vt));

  // Back-project to the target camera frame.
  const Var xn = (u - cx) / fx;
  const Var yn = (v - cy) / fy;
  const Var X = xn * depth;
  const Var Y = yn * depth;
  const Var& Z = depth;

  // Rigid motion into the source frame.
  const auto e = rotation_entries(pose.omega);
  const Var tx = slice(pose.t, 0, 0, 1);
  const Var ty = slice(pose.t, 0, 1, 1);
  const Var tz = slice(pose.t, 0, 2, 1);
  const Var Xs = e[0] * X + e[1] * Y + e[2] * Z + tx;
  const Var Ys = e[3] * X + e[4] * Y + e[5] * Z + ty;
  const Var Zs = e[6] * X + e[7] * Y + e[8] * Z + tz;

  constexpr double kMinDepth = 1e-6;
  WarpField out;
  out.valid = Tensor({1, height, width});
  const Tensor& zv = Zs.value();
  for (int i = 0; i < zv.size(); ++i) out.valid[i] = zv[i] > kMinDepth ? 1.0 : 0.0;

  const Var z_safe = clamp(Zs, kMinDepth, std::numeric_limits<double>::infinity());
  const Var us = fx * (Xs / z_safe) + cx;
  const Var vs = fy * (Ys / z_safe) + cy;
  out.grid = reshape(stack({us, vs}), {2, height, width});
  return out;
}

Var synthesize_view(const Var& source_image, const Var& grid) {
  return bilinear_sample(source_image, grid);
}

}  // namespace photosfm
