#pragma once

#include <string>
#include <vector>

#include "photosfm/camera.hpp"

namespace photosfm {

struct MedianScaleResult {
  Tensor scaled;       // pred * ratio
  double ratio = 1.0;  // median(gt at mask) / median(pred at mask)
};

// mask entries > 0.5 select the pixels used to form both medians. Throws
// std::domain_error on an empty mask or a non-positive prediction median.
MedianScaleResult median_scale(const Tensor& pred, const Tensor& gt, const Tensor& mask);

struct DepthEvalResult {
  double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0;
  double delta1 = 0, delta2 = 0, delta3 = 0;  // thresholds 1.25, 1.25^2, 1.25^3
  double scale_ratio = 1.0;
  int valid_count = 0;
};

// Standard seven-metric depth evaluation: ground truth pixels outside
// (1e-3, cap] are ignored; predictions are (optionally) median-scaled, then
// clamped to [1e-3, cap]. Throws std::domain_error if nothing is valid.
DepthEvalResult depth_metrics(const Tensor& pred, const Tensor& gt, double cap = 80.0,
                              bool use_median_scaling = true);

// Absolute trajectory error of one snippet given per-step relative poses
// (each maps frame i+1 coordinates into frame i). Steps are composed into
// absolute positions anchored at the first frame, a least-squares scale
// aligns predictions to ground truth, and the position RMSE is returned.
// per_pair=true instead averages per-step displacement error norms after the
// same global scale fit.
double snippet_ate(const std::vector<RigidTransform>& pred_rel,
                   const std::vector<RigidTransform>& gt_rel, bool per_pair = false);

struct AteResult {
  double mean = 0, stddev = 0;  // population standard deviation
  int snippet_count = 0;
};

AteResult aggregate_ate(const std::vector<double>& snippet_errors);

struct IntrinsicsErrorStats {
  double mean = 0, stddev = 0;
};

struct IntrinsicsReport {
  IntrinsicsErrorStats fx, fy, cx, cy;  // statistics of the estimates
  IntrinsicsValues gt;
  int count = 0;
  std::string format() const;  // "fx  0.5400 +/- 0.0000  (gt 0.5400)" style rows
};

IntrinsicsReport intrinsics_report(const std::vector<IntrinsicsValues>& estimates,
                                   const IntrinsicsValues& gt);

}  // namespace photosfm
