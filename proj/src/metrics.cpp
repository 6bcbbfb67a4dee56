#include "photosfm/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace photosfm {

MedianScaleResult median_scale(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  if (!pred.same_shape_as(gt) || !pred.same_shape_as(mask))
    throw std::invalid_argument("median_scale: pred/gt/mask shapes must match");
  std::vector<double> pv, gv;
  for (int i = 0; i < mask.size(); ++i)
    if (mask[i] > 0.5) {
      pv.push_back(pred[i]);
      gv.push_back(gt[i]);
    }
  if (pv.empty()) throw std::domain_error("median_scale: empty mask");
  const double pmed = median_of(pv);
  if (!(pmed > 0.0)) throw std::domain_error("median_scale: non-positive prediction median");
  MedianScaleResult out;
  out.ratio = median_of(gv) / pmed;
  out.scaled = pred;
  for (int i = 0; i < out.scaled.size(); ++i) out.scaled[i] *= out.ratio;
  return out;
}

DepthEvalResult depth_metrics(const Tensor& pred, const Tensor& gt, double cap,
                              bool use_median_scaling) {
  if (!pred.same_shape_as(gt)) throw std::invalid_argument("depth_metrics: shape mismatch");
  if (!(cap > 1e-3)) throw std::invalid_argument("depth_metrics: cap must exceed 1e-3");
  Tensor mask(gt.shape());
  int valid = 0;
  for (int i = 0; i < gt.size(); ++i) {
    mask[i] = (gt[i] > 1e-3 && gt[i] <= cap) ? 1.0 : 0.0;
    valid += mask[i] > 0.5 ? 1 : 0;
  }
  if (valid == 0) throw std::domain_error("depth_metrics: no valid ground-truth pixels");

  DepthEvalResult res;
  res.valid_count = valid;
  Tensor scaled = pred;
  if (use_median_scaling) {
    MedianScaleResult ms = median_scale(pred, gt, mask);
    res.scale_ratio = ms.ratio;
    scaled = std::move(ms.scaled);
  }

  const double t1 = 1.25, t2 = 1.25 * 1.25, t3 = 1.25 * 1.25 * 1.25;
  double abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0, d1 = 0, d2 = 0, d3 = 0;
  for (int i = 0; i < gt.size(); ++i) {
    if (mask[i] < 0.5) continue;
    const double p = std::min(std::max(scaled[i], 1e-3), cap);
    const double g = gt[i];
    const double diff = p - g;
    abs_rel += std::fabs(diff) / g;
    sq_rel += diff * diff / g;
    sq += diff * diff;
    const double dl = std::log(p) - std::log(g);
    sq_log += dl * dl;
    const double ratio = std::max(p / g, g / p);
    d1 += ratio < t1 ? 1.0 : 0.0;
    d2 += ratio < t2 ? 1.0 : 0.0;
    d3 += ratio < t3 ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(valid);
  res.abs_rel = abs_rel / n;
  res.sq_rel = sq_rel / n;
  res.rmse = std::sqrt(sq / n);
  res.rmse_log = std::sqrt(sq_log / n);
  res.delta1 = d1 / n;
  res.delta2 = d2 / n;
  res.delta3 = d3 / n;
  return res;
}

double snippet_ate(const std::vector<RigidTransform>& pred_rel,
                   const std::vector<RigidTransform>& gt_rel, bool per_pair) {
  if (pred_rel.empty()) throw std::invalid_argument("snippet_ate: empty snippet");
  if (pred_rel.size() != gt_rel.size())
    throw std::invalid_argument("snippet_ate: prediction/ground-truth length mismatch");
  const size_t n = pred_rel.size();

  std::vector<Eigen::Vector3d> p(n + 1), g(n + 1);
  RigidTransform pa = RigidTransform::identity(), ga = RigidTransform::identity();
  p[0] = Eigen::Vector3d::Zero();
  g[0] = Eigen::Vector3d::Zero();
  for (size_t i = 0; i < n; ++i) {
    pa = pa.compose(pred_rel[i]);
    ga = ga.compose(gt_rel[i]);
    p[i + 1] = pa.t;
    g[i + 1] = ga.t;
  }

  double dot = 0.0, norm = 0.0;
  for (size_t i = 0; i <= n; ++i) {
    dot += p[i].dot(g[i]);
    norm += p[i].squaredNorm();
  }
  const double scale = norm > 0.0 ? dot / norm : 1.0;

  if (per_pair) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i)
      acc += (scale * (p[i + 1] - p[i]) - (g[i + 1] - g[i])).norm();
    return acc / static_cast<double>(n);
  }
  double acc = 0.0;
  for (size_t i = 0; i <= n; ++i) acc += (scale * p[i] - g[i]).squaredNorm();
  return std::sqrt(acc / static_cast<double>(n + 1));
}

AteResult aggregate_ate(const std::vector<double>& snippet_errors) {
  if (snippet_errors.empty()) throw std::domain_error("aggregate_ate: no snippets");
  AteResult out;
  out.snippet_count = static_cast<int>(snippet_errors.size());
  double s = 0.0;
  for (double e : snippet_errors) s += e;
  out.mean = s / snippet_errors.size();
  double var = 0.0;
  for (double e : snippet_errors) var += (e - out.mean) * (e - out.mean);
  out.stddev = std::sqrt(var / snippet_errors.size());
  return out;
}

namespace {

IntrinsicsErrorStats stats_of(std::vector<double> v) {
  IntrinsicsErrorStats s;
  double acc = 0.0;
  for (double x : v) acc += x;
  s.mean = acc / v.size();
  double var = 0.0;
  for (double x : v) var += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(var / v.size());
  return s;
}

}  // namespace

IntrinsicsReport intrinsics_report(const std::vector<IntrinsicsValues>& estimates,
                                   const IntrinsicsValues& gt) {
  if (estimates.empty()) throw std::invalid_argument("intrinsics_report: no estimates");
  std::vector<double> fx, fy, cx, cy;
  for (const auto& e : estimates) {
    fx.push_back(e.fx);
    fy.push_back(e.fy);
    cx.push_back(e.cx);
    cy.push_back(e.cy);
  }
  IntrinsicsReport rep;
  rep.fx = stats_of(fx);
  rep.fy = stats_of(fy);
  rep.cx = stats_of(cx);
  rep.cy = stats_of(cy);
  rep.gt = gt;
  rep.count = static_cast<int>(estimates.size());
  return rep;
}

std::string IntrinsicsReport::format() const {
  char buf[256];
  std::string out;
  const auto row = [&](const char* name, const IntrinsicsErrorStats& s, double gt_v) {
    std::snprintf(buf, sizeof(buf), "%-3s %.4f +/- %.4f  (gt %.4f)\n", name, s.mean, s.stddev,
                  gt_v);
    out += buf;
  };
  row("fx", fx, gt.fx);
  row("fy", fy, gt.fy);
  row("cx", cx, gt.cx);
  row("cy", cy, gt.cy);
  return out;
}

}  // namespace photosfm
