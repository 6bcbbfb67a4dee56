#pragma once

#include <cstdint>
#include <functional>
#include <utility>

#include "photosfm/autodiff.hpp"

namespace photosfm {

// Produces a (out_ch, in_ch, k, k) kernel; used to seed ICNR replication.
using KernelSampler = std::function<Tensor(int out_ch, int in_ch, int k)>;

// Fan-in-scaled uniform init: entries drawn from U(-sqrt(6/fan_in), +sqrt(6/fan_in))
// with a seeded 64-bit Mersenne engine; bit-reproducible for a given seed.
Tensor kaiming_uniform_kernel(int out_ch, int in_ch, int k, std::uint64_t seed);

// Draws a base kernel of shape (out_ch/r^2, in_ch, k, k) and replicates each
// base filter r^2 times into consecutive output channels, so that shuffling
// the resulting conv output reproduces a nearest-neighbour upsample of the
// base conv's output.
Tensor icnr_init(int out_ch, int in_ch, int k, int r, const KernelSampler& base_sampler);
Tensor icnr_init(int out_ch, int in_ch, int k, int r, std::uint64_t seed);

struct Conv2dLayer {
  Var kernel;  // (out, in, k, k)
  Var bias;    // (out)
  int pad = 1;
  int stride = 1;
  PadMode mode = PadMode::Zero;
};

// Upsampling block: dconv(3x3, ELU) -> s1conv(5x5, ReLU) -> s2conv(3x3, ReLU)
// -> upconv(3x3 to out_ch*r^2, ReLU) -> pixel_shuffle(r).
struct SubpixelBlockConfig {
  int in_ch = 16;
  int dconv_ch = 16;
  int s1_ch = 64;
  int s2_ch = 32;
  int out_ch = 16;
  int r = 2;
};

struct SubpixelBlockWeights {
  Conv2dLayer dconv, s1conv, s2conv, upconv;
  int r = 2;

  // icnr_upconv=false draws the upconv kernel independently instead.
  static SubpixelBlockWeights init(const SubpixelBlockConfig& cfg, std::uint64_t seed,
                                   bool icnr_upconv = true, bool requires_grad = true);
};

Var subpixel_block(const Var& features, const SubpixelBlockWeights& w);

// Final head: one 3x3 conv to 2 channels, sigmoid on both. Channel 0 is
// disparity, channel 1 is uncertainty.
struct DispUncertHeadWeights {
  Conv2dLayer conv;
  static DispUncertHeadWeights init(int in_ch, std::uint64_t seed, bool requires_grad = true);
};

struct DispUncert {
  Var disparity;    // (1,H,W) in (0,1)
  Var uncertainty;  // (1,H,W) in (0,1)
};

DispUncert disp_uncert_head(const Var& features, const DispUncertHeadWeights& w);

// D = 1/(a*sigma + b) with b = 1/max_depth and a = 1/min_depth - 1/max_depth:
// sigma=0 gives max_depth, sigma=1 gives min_depth, strictly decreasing in
// between. Throws std::invalid_argument unless 0 < min_depth < max_depth.
Var disparity_to_depth(const Var& sigma, double min_depth = 0.1, double max_depth = 100.0);

// Value-level nearest-neighbour upsample by r; comparison target for the
// ICNR equivalence checks and the upsample demo.
Tensor nearest_upsample(const Tensor& chw, int r);

}  // namespace photosfm
