#include "photosfm/subpixel.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace photosfm {

Tensor kaiming_uniform_kernel(int out_ch, int in_ch, int k, std::uint64_t seed) {
  if (out_ch < 1 || in_ch < 1 || k < 1)
    throw std::invalid_argument("kaiming_uniform_kernel: non-positive dimension");
  const double fan_in = static_cast<double>(in_ch) * k * k;
  const double bound = std::sqrt(6.0 / fan_in);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor out({out_ch, in_ch, k, k});
  for (int i = 0; i < out.size(); ++i) out[i] = dist(rng);
  return out;
}

Tensor icnr_init(int out_ch, int in_ch, int k, int r, const KernelSampler& base_sampler) {
  if (r < 1) throw std::invalid_argument("icnr_init: r must be >= 1");
  if (out_ch % (r * r) != 0)
    throw std::invalid_argument("icnr_init: out_ch " + std::to_string(out_ch) +
                                " not divisible by r^2=" + std::to_string(r * r));
  const int base_ch = out_ch / (r * r);
  Tensor base = base_sampler(base_ch, in_ch, k);
  if (base.shape() != Shape{base_ch, in_ch, k, k})
    throw std::invalid_argument("icnr_init: sampler returned shape " + shape_str(base.shape()));
  Tensor out({out_ch, in_ch, k, k});
  const int filter_size = in_ch * k * k;
  for (int b = 0; b < base_ch; ++b)
    for (int p = 0; p < r * r; ++p)
      for (int i = 0; i < filter_size; ++i)
        out[(b * r * r + p) * filter_size + i] = base[b * filter_size + i];
  return out;
}

Tensor icnr_init(int out_ch, int in_ch, int k, int r, std::uint64_t seed) {
  return icnr_init(out_ch, in_ch, k, r, [seed](int oc, int ic, int kk) {
    return kaiming_uniform_kernel(oc, ic, kk, seed);
  });
}

namespace {

Conv2dLayer make_layer(int out_ch, int in_ch, int k, int pad, std::uint64_t seed,
                       bool requires_grad) {
  Conv2dLayer layer;
  layer.kernel = Var::leaf(kaiming_uniform_kernel(out_ch, in_ch, k, seed), requires_grad);
  layer.bias = Var::leaf(Tensor({out_ch}), requires_grad);
  layer.pad = pad;
  return layer;
}

Var apply_layer(const Var& x, const Conv2dLayer& layer) {
  return channel_bias(conv2d(x, layer.kernel, layer.stride, layer.pad, layer.mode), layer.bias);
}

}  // namespace

SubpixelBlockWeights SubpixelBlockWeights::init(const SubpixelBlockConfig& cfg, std::uint64_t seed,
                                                bool icnr_upconv, bool requires_grad) {
  if (cfg.r < 1) throw std::invalid_argument("SubpixelBlockWeights: r must be >= 1");
  SubpixelBlockWeights w;
  w.r = cfg.r;
  w.dconv = make_layer(cfg.dconv_ch, cfg.in_ch, 3, 1, seed, requires_grad);
  w.s1conv = make_layer(cfg.s1_ch, cfg.dconv_ch, 5, 2, seed + 1, requires_grad);
  w.s2conv = make_layer(cfg.s2_ch, cfg.s1_ch, 3, 1, seed + 2, requires_grad);
  const int up_out = cfg.out_ch * cfg.r * cfg.r;
  if (icnr_upconv) {
    Conv2dLayer up;
    up.kernel = Var::leaf(icnr_init(up_out, cfg.s2_ch, 3, cfg.r, seed + 3), requires_grad);
    up.bias = Var::leaf(Tensor({up_out}), requires_grad);
    up.pad = 1;
    w.upconv = up;
  } else {
    w.upconv = make_layer(up_out, cfg.s2_ch, 3, 1, seed + 3, requires_grad);
  }
  return w;
}

Var subpixel_block(const Var& features, const SubpixelBlockWeights& w) {
  const Var a = elu(apply_layer(features, w.dconv));
  const Var b = relu(apply_layer(a, w.s1conv));
  const Var c = relu(apply_layer(b, w.s2conv));
  const Var d = relu(apply_layer(c, w.upconv));
  return pixel_shuffle(d, w.r);
}

DispUncertHeadWeights DispUncertHeadWeights::init(int in_ch, std::uint64_t seed,
                                                  bool requires_grad) {
  DispUncertHeadWeights w;
  w.conv = make_layer(2, in_ch, 3, 1, seed, requires_grad);
  return w;
}

DispUncert disp_uncert_head(const Var& features, const DispUncertHeadWeights& w) {
  const Var out = sigmoid(apply_layer(features, w.conv));
  DispUncert result;
  result.disparity = slice(out, 0, 0, 1);
  result.uncertainty = slice(out, 0, 1, 1);
  return result;
}

Var disparity_to_depth(const Var& sigma, double min_depth, double max_depth) {
  if (!(min_depth > 0.0) || !(max_depth > min_depth))
    throw std::invalid_argument("disparity_to_depth: need 0 < min_depth < max_depth");
  const double b = 1.0 / max_depth;
  const double a = 1.0 / min_depth - b;
  return 1.0 / (sigma * a + b);
}

Tensor nearest_upsample(const Tensor& chw, int r) {
  if (chw.rank() != 3) throw std::invalid_argument("nearest_upsample: rank-3 input required");
  if (r < 1) throw std::invalid_argument("nearest_upsample: r must be >= 1");
  const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  Tensor out({c, h * r, w * r});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h * r; ++y)
      for (int x = 0; x < w * r; ++x) out.at(ch, y, x) = chw.at(ch, y / r, x / r);
  return out;
}

}  // namespace photosfm
