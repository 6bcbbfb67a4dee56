#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <vector>

#include "photosfm/tensor.hpp"

namespace photosfm {

namespace detail {
struct Node;
}

// Keyed by leaf node id; see Var::id().
using GradientMap = std::map<std::int64_t, Tensor>;

// Handle to a node of the reverse-mode tape. Vars are cheap to copy; the
// underlying graph is shared and freed when the last handle drops. Node ids
// are assigned from a global monotone counter, so ids order topologically
// (every input of a node has a smaller id than the node itself).
class Var {
 public:
  Var() = default;

  static Var leaf(Tensor value, bool requires_grad);
  static Var constant(Tensor value);          // leaf without gradient
  static Var param(Tensor value);             // leaf with gradient
  static Var scalar(double v);                // constant scalar

  bool valid() const { return node_ != nullptr; }
  std::int64_t id() const;
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  int size() const { return value().size(); }
  bool requires_grad() const;
  bool is_leaf() const;

  // In-place update of a leaf's value (same shape); used by the optimizer
  // between tape builds. Throws std::logic_error on non-leaf or shape change.
  void set_value(Tensor v);

  // Gradient left on this node by the most recent backward(). Throws
  // std::logic_error if no backward pass has touched the node.
  const Tensor& grad() const;

  // Internal; used by the op implementations.
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// ---- elementwise ----
// Binary ops accept equal shapes or a scalar ({1}) on either side.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);  // throws std::domain_error on a zero denominator

Var neg(const Var& a);
Var vlog(const Var& a);  // throws std::domain_error unless all entries > 0
Var vexp(const Var& a);
Var vabs(const Var& a);
Var clamp(const Var& a, double lo, double hi);  // gradient passes where lo <= x <= hi
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var elu(const Var& a);
Var relu(const Var& a);
Var vpow(const Var& a, double exponent);
Var square(const Var& a);
Var vsqrt(const Var& a);

// Applies a smooth scalar function with caller-supplied derivative. The
// extension point for the rotation coefficients and similar one-off maps.
Var map_unary(const Var& a, std::function<double(double)> f, std::function<double(double)> df,
              const char* label = "map_unary");

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator+(const Var& a, double b);
Var operator+(double a, const Var& b);
Var operator-(const Var& a, double b);
Var operator-(double a, const Var& b);
Var operator*(const Var& a, double b);
Var operator*(double a, const Var& b);
Var operator/(const Var& a, double b);
Var operator/(double a, const Var& b);
Var operator-(const Var& a);

// ---- reductions ----
Var sum(const Var& a);
Var mean(const Var& a);
Var sum_along(const Var& a, int axis);
Var mean_along(const Var& a, int axis);
// Ties resolve to the lowest index; the gradient routes there.
Var min_along(const Var& a, int axis);
Var max_along(const Var& a, int axis);
// Evaluation-only: the result is a constant and carries no gradient.
Var median(const Var& a);

// ---- structure ----
Var reshape(const Var& a, Shape shape);
Var slice(const Var& a, int axis, int start, int length);
Var stack(const std::vector<Var>& parts);  // new leading axis
Var matmul(const Var& a, const Var& b);    // (m,k) x (k,n)
Var transpose2d(const Var& a);
// (C,H,W) plus a per-channel (C) bias.
Var channel_bias(const Var& chw, const Var& bias);

// ---- image ops (rank-3 CHW) ----
// kernel is (out_ch, in_ch, k, k) with odd k; output spatial size is
// floor((dim + 2*pad - k) / stride) + 1. Reflect padding requires
// pad < the corresponding input dimension.
Var conv2d(const Var& input, const Var& kernel, int stride, int pad, PadMode mode);

// (C*r^2, H, W) -> (C, r*H, r*W); out(c, r*y+dy, r*x+dx) = in(c*r^2 + dy*r + dx, y, x).
Var pixel_shuffle(const Var& a, int r);
Var pixel_unshuffle(const Var& a, int r);

// grid is (2, H', W') with channel 0 holding x and channel 1 holding y, in
// pixel units where (0,0) is the center of the top-left source pixel.
// Coordinates clamp to the valid range; the grid gradient is zero wherever
// the pre-clamp coordinate fell outside it.
Var bilinear_sample(const Var& source, const Var& grid);
Var resize_bilinear(const Var& source, int out_h, int out_w);

// ---- backward and checking ----
// loss must be scalar; returns gradients of every reachable leaf that
// requires one, keyed by node id. Deterministic: repeat calls on the same
// graph produce bit-identical results.
GradientMap backward(const Var& loss);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<double> per_param_error;  // worst relative error per parameter
};

// Central finite differences of f against the analytic gradients, parameter
// by parameter. Relative error uses max(|analytic|, |numeric|, 1e-8) as the
// denominator. Throws std::domain_error if f evaluates to a non-finite value.
GradCheckReport grad_check(const std::function<Var()>& f, const std::vector<Var>& params,
                           double h = 1e-5);

}  // namespace photosfm
