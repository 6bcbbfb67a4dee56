#pragma once

#include <optional>
#include <vector>

#include "photosfm/camera.hpp"

namespace photosfm {

struct LossConfig {
  double alpha = 0.85;          // SSIM-vs-L1 blend in the photometric error
  double lambda = 1e-3;         // smoothness weight
  double ssim_c1 = 1e-4;        // (0.01)^2
  double ssim_c2 = 9e-4;        // (0.03)^2
  double sigma_min = 0.01;      // lower clamp for the uncertainty map
  double uncert_offset = 1.5;   // additive constant of the weighted loss
  int n_scales = 4;             // pyramid depth; factors 1/2^(n-1) .. 1
  bool scale_lambda_decay = true;  // halve lambda per octave of downscaling
  double min_depth = 0.1;
  double max_depth = 100.0;

  // Ascending: coarsest first, e.g. {1/8, 1/4, 1/2, 1} for four scales.
  std::vector<double> scale_factors() const;
  void validate() const;  // throws std::invalid_argument
};

// Mean-filtered (3x3, reflect-padded) structural similarity per channel.
Var ssim(const Var& x, const Var& y, const LossConfig& cfg);

// alpha * (1 - SSIM)/2 + (1 - alpha) * |.|_1, both averaged over channels;
// result is (1,H,W).
Var photometric_error(const Var& target, const Var& candidate, const LossConfig& cfg);

// Per-pixel minimum across error maps; ties go to the earliest map.
Var min_reprojection(const std::vector<Var>& error_maps);

// min_err / (2*sigma^2) + log(sigma)/2 + offset, with sigma clamped to
// [sigma_min, 1]. The overload without sigma is the fixed-variance case and
// reduces to min_err/2 + offset exactly.
Var uncertainty_weighted(const Var& min_error, const Var& sigma, const LossConfig& cfg);
Var uncertainty_weighted(const Var& min_error, const LossConfig& cfg);

// Stationary-pixel rejection: 1 where the best unwarped source error exceeds
// the best warped error, else 0. Purely value-level; the result is a
// constant and never contributes gradients.
Var auto_mask(const Var& target, const std::vector<Var>& sources, const std::vector<Var>& warped,
              const LossConfig& cfg);

// Edge-aware first+second order penalty on mean-normalized disparity. The
// image (same resolution) is channel-averaged before taking its gradients.
// Throws std::domain_error if the disparity mean is not positive.
Var smoothness(const Var& disp, const Var& image, const LossConfig& cfg);

// One optimization problem snapshot: a target frame, its source frames, and
// every learnable quantity. raw_disp holds pre-sigmoid disparity per scale,
// parallel to LossConfig::scale_factors(); raw_uncertainty (optional) is a
// single full-resolution pre-sigmoid map.
struct LossInputs {
  Var target;                        // (3,H,W)
  std::vector<Var> sources;          // (3,H,W) each
  std::vector<Var> raw_disp;         // (1, H*f, W*f) per scale factor f
  std::vector<PoseSE3> poses;        // target->source, parallel to sources
  Intrinsics intrinsics;
  std::optional<Var> raw_uncertainty;  // (1,H,W)
};

// Values that stay constant across optimization steps of one problem; filled
// on first use and reused afterwards.
struct LossScratch {
  bool ready = false;
  Tensor unwarped_min;                // (1,H,W) best source-vs-target error
  std::vector<Tensor> target_scaled;  // per-scale resized targets
};

// Per scale: upsample disparity to full resolution, warp every source,
// take the per-pixel minimum error, weight by uncertainty, drop masked
// pixels (falling back to the unmasked mean when the mask rejects
// everything), and add the weighted smoothness term computed at the scale's
// native resolution. Scales are averaged.
Var total_loss(const LossInputs& in, const LossConfig& cfg, LossScratch* scratch = nullptr);

}  // namespace photosfm
