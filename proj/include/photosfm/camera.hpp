#pragma once

#include <Eigen/Dense>

#include "photosfm/autodiff.hpp"

namespace photosfm {

// Value-level rigid transform; used for ground truth, trajectory files and
// evaluation. The differentiable pose lives in PoseSE3 below.
struct RigidTransform {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform from_axis_angle(const Eigen::Vector3d& omega, const Eigen::Vector3d& t);
  RigidTransform compose(const RigidTransform& other) const;  // this applied after other
  RigidTransform inverse() const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return R * p + t; }
};

// Normalized pinhole intrinsics: focal lengths are fractions of image width
// and height, the principal point is a fraction of the image size.
struct IntrinsicsValues {
  double fx = 0.5, fy = 0.5, cx = 0.5, cy = 0.5;
};

// Learnable intrinsics. Focal lengths pass through softplus so they stay
// positive no matter where the optimizer walks; the principal point is raw.
struct Intrinsics {
  Var raw_fx, raw_fy, cx, cy;  // all scalars

  Var fx() const { return softplus(raw_fx); }
  Var fy() const { return softplus(raw_fy); }
  IntrinsicsValues normalized() const;
};

double softplus_inverse(double y);  // y > 0

// All four normalized quantities start at 0.5, an un-informed guess that
// assumes nothing about the camera: raw focals at softplus_inverse(0.5).
Intrinsics init_intrinsics(bool requires_grad = true);
Intrinsics intrinsics_from_normalized(const IntrinsicsValues& k, bool requires_grad = false);

// (3,3) pixel-unit camera matrix for the given image size, and its
// closed-form inverse (also differentiable).
Var intrinsics_matrix(const Intrinsics& k, int width, int height);
Var intrinsics_inverse_matrix(const Intrinsics& k, int width, int height);

// Differentiable 6-DoF pose: axis-angle rotation plus translation.
struct PoseSE3 {
  Var omega;  // (3)
  Var t;      // (3)

  static PoseSE3 identity(bool requires_grad = true);
  static PoseSE3 from_values(const Eigen::Vector3d& omega, const Eigen::Vector3d& t,
                             bool requires_grad = true);
  RigidTransform values() const;
};

// Rodrigues' rotation as a (3,3) Var. Smooth through the origin: the
// coefficients sin(th)/th and (1-cos(th))/th^2 are evaluated as functions of
// th^2 with series expansions near zero, so gradients are exact for tiny
// rotations too.
Var so3_exp(const Var& omega);

// Source-frame sampling positions for every target pixel: back-project with
// the inverse intrinsics and per-pixel depth, move through the target->source
// pose, reproject. Projected depths are clamped to 1e-6 before the divide;
// `valid` flags pixels whose untouched depth exceeded that bound.
struct WarpField {
  Var grid;      // (2,H,W) pixel coordinates in the source frame
  Tensor valid;  // (1,H,W) of {0,1}
};
WarpField warp_grid(const Var& depth, const Intrinsics& k, const PoseSE3& pose, int width,
                    int height);

// Resamples the source image at the warp grid (border-clamped bilinear).
Var synthesize_view(const Var& source_image, const Var& grid);

}  // namespace photosfm
