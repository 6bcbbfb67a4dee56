#include "photosfm/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "photosfm/subpixel.hpp"

namespace photosfm {

namespace {

constexpr double kInvalidPenalty = 1e9;

void require_chw(const Var& v, const char* op) {
  if (!v.valid() || v.shape().size() != 3)
    throw std::invalid_argument(std::string(op) + ": rank-3 (C,H,W) input required");
}

Var box3_filter(const Var& plane) {
  static const Tensor kernel({1, 1, 3, 3}, std::vector<double>(9, 1.0 / 9.0));
  return conv2d(plane, Var::constant(kernel), 1, 1, PadMode::Reflect);
}

Var dx(const Var& t) {
  const int w = t.shape()[2];
  return slice(t, 2, 1, w - 1) - slice(t, 2, 0, w - 1);
}

Var dy(const Var& t) {
  const int h = t.shape()[1];
  return slice(t, 1, 1, h - 1) - slice(t, 1, 0, h - 1);
}

Var crop_rows(const Var& t, int n) { return slice(t, 1, 0, n); }
Var crop_cols(const Var& t, int n) { return slice(t, 2, 0, n); }

// |grad_sum| * exp(-0.5 * |image_grad_sum|), averaged over the map.
Var edge_weighted_term(const Var& grad_sum, const Var& image_grad_sum) {
  return mean(vabs(grad_sum) * vexp(vabs(image_grad_sum) * -0.5));
}

Var channel_average(const Var& chw) {
  const int h = chw.shape()[1], w = chw.shape()[2];
  return reshape(mean_along(chw, 0), {1, h, w});
}

}  // namespace

std::vector<double> LossConfig::scale_factors() const {
  std::vector<double> out;
  out.reserve(static_cast<size_t>(n_scales));
  for (int i = 0; i < n_scales; ++i) out.push_back(std::ldexp(1.0, i - (n_scales - 1)));
  return out;
}

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("LossConfig: alpha outside [0,1]");
  if (!(lambda >= 0.0)) throw std::invalid_argument("LossConfig: negative lambda");
  if (!(ssim_c1 > 0.0) || !(ssim_c2 > 0.0))
    throw std::invalid_argument("LossConfig: SSIM constants must be positive");
  if (!(sigma_min > 0.0 && sigma_min <= 1.0))
    throw std::invalid_argument("LossConfig: sigma_min outside (0,1]");
  if (n_scales < 1 || n_scales > 8) throw std::invalid_argument("LossConfig: n_scales outside [1,8]");
  if (!(min_depth > 0.0) || !(max_depth > min_depth))
    throw std::invalid_argument("LossConfig: need 0 < min_depth < max_depth");
}

Var ssim(const Var& x, const Var& y, const LossConfig& cfg) {
  require_chw(x, "ssim");
  require_chw(y, "ssim");
  if (!same_shape(x.shape(), y.shape()))
    throw std::invalid_argument("ssim: mismatched shapes " + shape_str(x.shape()) + " vs " +
                                shape_str(y.shape()));
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  std::vector<Var> per_channel;
  per_channel.reserve(static_cast<size_t>(c));
  for (int ch = 0; ch < c; ++ch) {
    const Var xc = slice(x, 0, ch, 1);
    const Var yc = slice(y, 0, ch, 1);
    const Var mx = box3_filter(xc);
    const Var my = box3_filter(yc);
    const Var mxx = box3_filter(xc * xc);
    const Var myy = box3_filter(yc * yc);
    const Var mxy = box3_filter(xc * yc);
    const Var vx = mxx - mx * mx;
    const Var vy = myy - my * my;
    const Var cov = mxy - mx * my;
    const Var num = (2.0 * mx * my + cfg.ssim_c1) * (2.0 * cov + cfg.ssim_c2);
    const Var den = (mx * mx + my * my + cfg.ssim_c1) * (vx + vy + cfg.ssim_c2);
    per_channel.push_back(num / den);
  }
  return reshape(stack(per_channel), {c, h, w});
}

Var photometric_error(const Var& target, const Var& candidate, const LossConfig& cfg) {
  require_chw(target, "photometric_error");
  require_chw(candidate, "photometric_error");
  if (!same_shape(target.shape(), candidate.shape()))
    throw std::invalid_argument("photometric_error: mismatched shapes");
  const int h = target.shape()[1], w = target.shape()[2];
  const Var l1 = reshape(mean_along(vabs(target - candidate), 0), {1, h, w});
  if (cfg.alpha == 0.0) return l1;  // pure L1; skips five box filters
  const Var s = reshape(mean_along(ssim(target, candidate, cfg), 0), {1, h, w});
  return cfg.alpha * ((1.0 - s) * 0.5) + (1.0 - cfg.alpha) * l1;
}

Var min_reprojection(const std::vector<Var>& error_maps) {
  if (error_maps.empty()) throw std::invalid_argument("min_reprojection: no error maps");
  if (error_maps.size() == 1) return error_maps[0];
  return min_along(stack(error_maps), 0);
}

Var uncertainty_weighted(const Var& min_error, const Var& sigma, const LossConfig& cfg) {
  if (!same_shape(min_error.shape(), sigma.shape()))
    throw std::invalid_argument("uncertainty_weighted: sigma shape mismatch");
  const Var s = clamp(sigma, cfg.sigma_min, 1.0);
  return min_error / (2.0 * square(s)) + 0.5 * vlog(s) + cfg.uncert_offset;
}

Var uncertainty_weighted(const Var& min_error, const LossConfig& cfg) {
  return min_error * 0.5 + cfg.uncert_offset;
}

Var auto_mask(const Var& target, const std::vector<Var>& sources, const std::vector<Var>& warped,
              const LossConfig& cfg) {
  if (sources.empty() || warped.empty())
    throw std::invalid_argument("auto_mask: source and warped lists must be non-empty");
  const Var t = Var::constant(target.value());
  std::vector<Var> unwarped_errs, warped_errs;
  for (const auto& s : sources)
    unwarped_errs.push_back(photometric_error(t, Var::constant(s.value()), cfg));
  for (const auto& w : warped)
    warped_errs.push_back(photometric_error(t, Var::constant(w.value()), cfg));
  const Tensor umin = min_reprojection(unwarped_errs).value();
  const Tensor wmin = min_reprojection(warped_errs).value();
  Tensor mask(umin.shape());
  for (int i = 0; i < mask.size(); ++i) mask[i] = umin[i] > wmin[i] ? 1.0 : 0.0;
  return Var::constant(std::move(mask));
}

Var smoothness(const Var& disp, const Var& image, const LossConfig&) {
  require_chw(disp, "smoothness");
  require_chw(image, "smoothness");
  const int h = disp.shape()[1], w = disp.shape()[2];
  if (disp.shape()[0] != 1) throw std::invalid_argument("smoothness: disparity must be (1,H,W)");
  if (image.shape()[1] != h || image.shape()[2] != w)
    throw std::invalid_argument("smoothness: image resolution must match the disparity");
  if (h < 3 || w < 3) throw std::invalid_argument("smoothness: needs at least 3x3 maps");

  const Var m = mean(disp);
  if (!(m.value()[0] > 0.0)) throw std::domain_error("smoothness: non-positive mean disparity");
  const Var d = disp / m;
  const Var gray = channel_average(image);

  // First order: (d/dx + d/dy) on the common (h-1, w-1) region.
  const Var g1_d = crop_rows(dx(d), h - 1) + crop_cols(dy(d), w - 1);
  const Var g1_i = crop_rows(dx(gray), h - 1) + crop_cols(dy(gray), w - 1);
  const Var first = edge_weighted_term(g1_d, g1_i);

  // Second order: (dxx + dxy + dyx + dyy) on the common (h-2, w-2) region.
  const auto g2 = [h, w](const Var& t) {
    const Var tdx = dx(t);
    const Var tdy = dy(t);
    return crop_rows(dx(tdx), h - 2) + crop_rows(crop_cols(dy(tdx), w - 2), h - 2) +
           crop_rows(crop_cols(dx(tdy), w - 2), h - 2) + crop_cols(dy(tdy), w - 2);
  };
  const Var second = edge_weighted_term(g2(d), g2(gray));
  return first + second;
}

namespace {

Tensor compute_unwarped_min(const LossInputs& in, const LossConfig& cfg) {
  const Var t = Var::constant(in.target.value());
  std::vector<Var> errs;
  errs.reserve(in.sources.size());
  for (const auto& s : in.sources)
    errs.push_back(photometric_error(t, Var::constant(s.value()), cfg));
  return min_reprojection(errs).value();
}

}  // namespace

Var total_loss(const LossInputs& in, const LossConfig& cfg, LossScratch* scratch) {
  cfg.validate();
  require_chw(in.target, "total_loss");
  if (in.sources.empty()) throw std::invalid_argument("total_loss: no source frames");
  if (in.poses.size() != in.sources.size())
    throw std::invalid_argument("total_loss: poses must parallel sources");
  const int height = in.target.shape()[1], width = in.target.shape()[2];
  for (const auto& s : in.sources)
    if (!same_shape(s.shape(), in.target.shape()))
      throw std::invalid_argument("total_loss: source/target shape mismatch");
  const auto factors = cfg.scale_factors();
  if (in.raw_disp.size() != factors.size())
    throw std::invalid_argument("total_loss: expected " + std::to_string(factors.size()) +
                                " disparity scales, got " + std::to_string(in.raw_disp.size()));
  if (in.raw_uncertainty && in.raw_uncertainty->shape() != Shape{1, height, width})
    throw std::invalid_argument("total_loss: uncertainty map must be (1,H,W)");

  LossScratch local;
  LossScratch& cache = scratch ? *scratch : local;
  if (!cache.ready) {
    cache.unwarped_min = compute_unwarped_min(in, cfg);
    cache.target_scaled.clear();
    for (size_t i = 0; i < factors.size(); ++i) {
      const int oct = cfg.n_scales - 1 - static_cast<int>(i);
      const int div = 1 << oct;
      if (height % div != 0 || width % div != 0)
        throw std::invalid_argument("total_loss: image size not divisible by scale " +
                                    std::to_string(div));
      cache.target_scaled.push_back(
          resize_bilinear(Var::constant(in.target.value()), height / div, width / div).value());
    }
    cache.ready = true;
  }

  std::optional<Var> sigma;
  if (in.raw_uncertainty) sigma = sigmoid(*in.raw_uncertainty);

  const double a = 1.0 / cfg.min_depth - 1.0 / cfg.max_depth;
  const double b = 1.0 / cfg.max_depth;

  Var acc;
  for (size_t i = 0; i < factors.size(); ++i) {
    const int oct = cfg.n_scales - 1 - static_cast<int>(i);
    const int div = 1 << oct;
    const int sh = height / div, sw = width / div;
    if (in.raw_disp[i].shape() != Shape{1, sh, sw})
      throw std::invalid_argument("total_loss: disparity scale " + std::to_string(i) +
                                  " must be (1," + std::to_string(sh) + "," + std::to_string(sw) +
                                  ")");
    const Var disp_native = sigmoid(in.raw_disp[i]);
    const Var disp_full = resize_bilinear(disp_native, height, width);
    const Var depth = disparity_to_depth(disp_full, cfg.min_depth, cfg.max_depth);

    std::vector<Var> errs;
    errs.reserve(in.sources.size());
    for (size_t k = 0; k < in.sources.size(); ++k) {
      WarpField wf = warp_grid(depth, in.intrinsics, in.poses[k], width, height);
      const Var warped = synthesize_view(in.sources[k], wf.grid);
      Var err = photometric_error(in.target, warped, cfg);
      if (wf.valid.min_value() < 1.0) {
        Tensor penalty(wf.valid.shape());
        for (int p = 0; p < penalty.size(); ++p)
          penalty[p] = (1.0 - wf.valid[p]) * kInvalidPenalty;
        err = err + Var::constant(std::move(penalty));
      }
      errs.push_back(err);
    }
    const Var min_err = min_reprojection(errs);
    const Var weighted =
        sigma ? uncertainty_weighted(min_err, *sigma, cfg) : uncertainty_weighted(min_err, cfg);

    Tensor mask(min_err.shape());
    double count = 0.0;
    for (int p = 0; p < mask.size(); ++p) {
      mask[p] = cache.unwarped_min[p] > min_err.value()[p] ? 1.0 : 0.0;
      count += mask[p];
    }
    const Var photo =
        count > 0.0 ? sum(weighted * Var::constant(std::move(mask))) / count : mean(weighted);

    const Var inv_depth_native = disp_native * a + b;
    const Var smooth = smoothness(inv_depth_native, Var::constant(cache.target_scaled[i]), cfg);
    const double lam = cfg.lambda * (cfg.scale_lambda_decay ? std::ldexp(1.0, -oct) : 1.0);
    const Var per_scale = photo + lam * smooth;
    acc = acc.valid() ? acc + per_scale : per_scale;
  }
  return acc / static_cast<double>(cfg.n_scales);
}

}  // namespace photosfm
