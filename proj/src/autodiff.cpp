#include "photosfm/autodiff.hpp"

#include <algorithm>
#include <numeric>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

namespace photosfm {

namespace detail {

struct Node {
  std::int64_t id = 0;
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool leaf = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backprop;
};

}  // namespace detail

using detail::Node;

namespace {

std::atomic<std::int64_t> g_next_id{1};

std::shared_ptr<Node> make_leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->id = g_next_id.fetch_add(1);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->leaf = true;
  return n;
}

// Inputs and the backprop closure are only retained when some input carries
// gradient; constant subgraphs collapse to fresh leaves and free their tape.
std::shared_ptr<Node> make_node(Tensor value, std::vector<std::shared_ptr<Node>> inputs,
                                std::function<void(Node&)> back) {
  auto n = std::make_shared<Node>();
  n->id = g_next_id.fetch_add(1);
  n->value = std::move(value);
  bool req = false;
  for (const auto& in : inputs) req = req || (in && in->requires_grad);
  n->requires_grad = req;
  if (req) {
    n->inputs = std::move(inputs);
    n->backprop = std::move(back);
  }
  return n;
}

const std::shared_ptr<Node>& checked(const Var& v, const char* op) {
  if (!v.valid()) throw std::logic_error(std::string(op) + ": empty Var");
  return v.node();
}

bool is_scalar_shape(const Shape& s) { return s.size() == 1 && s[0] == 1; }

// Accumulates g into dst, summing when dst is the scalar side of a broadcast.
void acc_to(Tensor& dst, const Tensor& g) {
  if (dst.size() == g.size()) {
    double* d = dst.data();
    const double* s = g.data();
    for (int i = 0; i < g.size(); ++i) d[i] += s[i];
  } else if (dst.size() == 1) {
    double acc = 0.0;
    const double* s = g.data();
    for (int i = 0; i < g.size(); ++i) acc += s[i];
    dst[0] += acc;
  } else {
    throw std::logic_error("gradient accumulation shape mismatch");
  }
}

Shape binary_out_shape(const Var& a, const Var& b, const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa == sb) return sa;
  if (is_scalar_shape(sa)) return sb;
  if (is_scalar_shape(sb)) return sa;
  throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(sa) + " and " +
                              shape_str(sb) + " are neither equal nor scalar-broadcastable");
}

int checked_axis(const Var& a, int axis, const char* op) {
  if (axis < 0 || axis >= static_cast<int>(a.shape().size()))
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                " out of range for shape " + shape_str(a.shape()));
  return axis;
}

Shape drop_axis(const Shape& s, int axis) {
  Shape out;
  for (int i = 0; i < static_cast<int>(s.size()); ++i)
    if (i != axis) out.push_back(s[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

void axis_strides(const Shape& s, int axis, int& outer, int& dim, int& inner) {
  outer = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  dim = s[axis];
  inner = 1;
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) inner *= s[i];
}

// Maps a possibly out-of-range coordinate into [0, n); -1 means "zero pad".
inline int map_pad(int i, int n, PadMode mode) {
  if (i >= 0 && i < n) return i;
  switch (mode) {
    case PadMode::Zero:
      return -1;
    case PadMode::ClampEdge:
      return i < 0 ? 0 : n - 1;
    case PadMode::Reflect:
      return i < 0 ? -i : 2 * n - 2 - i;
  }
  return -1;
}

}  // namespace

// ---- Var ----

Var Var::leaf(Tensor value, bool requires_grad) { return Var(make_leaf(std::move(value), requires_grad)); }
Var Var::constant(Tensor value) { return Var(make_leaf(std::move(value), false)); }
Var Var::param(Tensor value) { return Var(make_leaf(std::move(value), true)); }
Var Var::scalar(double v) { return Var(make_leaf(Tensor::scalar(v), false)); }

std::int64_t Var::id() const { return checked(*this, "id")->id; }
const Tensor& Var::value() const { return checked(*this, "value")->value; }
bool Var::requires_grad() const { return checked(*this, "requires_grad")->requires_grad; }
bool Var::is_leaf() const { return checked(*this, "is_leaf")->leaf; }

void Var::set_value(Tensor v) {
  auto& n = checked(*this, "set_value");
  if (!n->leaf) throw std::logic_error("set_value: only leaves can be reassigned");
  if (!same_shape(v.shape(), n->value.shape()))
    throw std::logic_error("set_value: shape change from " + shape_str(n->value.shape()) + " to " +
                           shape_str(v.shape()));
  n->value = std::move(v);
}

const Tensor& Var::grad() const {
  auto& n = checked(*this, "grad");
  if (n->grad.size() == 0) throw std::logic_error("grad: no gradient recorded on this Var");
  return n->grad;
}

// ---- elementwise binary ----

Var add(const Var& a, const Var& b) {
  auto na = checked(a, "add");
  auto nb = checked(b, "add");
  Shape os = binary_out_shape(a, b, "add");
  Tensor out(os);
  const Tensor& ta = na->value;
  const Tensor& tb = nb->value;
  const bool as = ta.size() == 1, bs = tb.size() == 1;
  for (int i = 0; i < out.size(); ++i) out[i] = ta[as ? 0 : i] + tb[bs ? 0 : i];
  return Var(make_node(std::move(out), {na, nb}, [](Node& self) {
    if (self.inputs[0]->requires_grad) acc_to(self.inputs[0]->grad, self.grad);
    if (self.inputs[1]->requires_grad) acc_to(self.inputs[1]->grad, self.grad);
  }));
}

Var sub(const Var& a, const Var& b) {
  auto na = checked(a, "sub");
  auto nb = checked(b, "sub");
  Shape os = binary_out_shape(a, b, "sub");
  Tensor out(os);
  const Tensor& ta = na->value;
  const Tensor& tb = nb->value;
  const bool as = ta.size() == 1, bs = tb.size() == 1;
  for (int i = 0; i < out.size(); ++i) out[i] = ta[as ? 0 : i] - tb[bs ? 0 : i];
  return Var(make_node(std::move(out), {na, nb}, [](Node& self) {
    if (self.inputs[0]->requires_grad) acc_to(self.inputs[0]->grad, self.grad);
    if (self.inputs[1]->requires_grad) {
      Node& b_in = *self.inputs[1];
      if (b_in.grad.size() == self.grad.size()) {
        for (int i = 0; i < self.grad.size(); ++i) b_in.grad[i] -= self.grad[i];
      } else {
        double acc = 0.0;
        for (int i = 0; i < self.grad.size(); ++i) acc += self.grad[i];
        b_in.grad[0] -= acc;
      }
    }
  }));
}

Var mul(const Var& a, const Var& b) {
  auto na = checked(a, "mul");
  auto nb = checked(b, "mul");
  Shape os = binary_out_shape(a, b, "mul");
  Tensor out(os);
  const Tensor& ta = na->value;
  const Tensor& tb = nb->value;
  const bool as = ta.size() == 1, bs = tb.size() == 1;
  for (int i = 0; i < out.size(); ++i) out[i] = ta[as ? 0 : i] * tb[bs ? 0 : i];
  return Var(make_node(std::move(out), {na, nb}, [as, bs](Node& self) {
    const Tensor& ta = self.inputs[0]->value;
    const Tensor& tb = self.inputs[1]->value;
    const Tensor& g = self.grad;
    if (self.inputs[0]->requires_grad) {
      Tensor& ga = self.inputs[0]->grad;
      for (int i = 0; i < g.size(); ++i) ga[as ? 0 : i] += g[i] * tb[bs ? 0 : i];
    }
    if (self.inputs[1]->requires_grad) {
      Tensor& gb = self.inputs[1]->grad;
      for (int i = 0; i < g.size(); ++i) gb[bs ? 0 : i] += g[i] * ta[as ? 0 : i];
    }
  }));
}

Var div(const Var& a, const Var& b) {
  auto na = checked(a, "div");
  auto nb = checked(b, "div");
  Shape os = binary_out_shape(a, b, "div");
  for (int i = 0; i < nb->value.size(); ++i)
    if (nb->value[i] == 0.0) throw std::domain_error("div: zero denominator");
  Tensor out(os);
  const Tensor& ta = na->value;
  const Tensor& tb = nb->value;
  const bool as = ta.size() == 1, bs = tb.size() == 1;
  for (int i = 0; i < out.size(); ++i) out[i] = ta[as ? 0 : i] / tb[bs ? 0 : i];
  return Var(make_node(std::move(out), {na, nb}, [as, bs](Node& self) {
    const Tensor& ta = self.inputs[0]->value;
    const Tensor& tb = self.inputs[1]->value;
    const Tensor& g = self.grad;
    if (self.inputs[0]->requires_grad) {
      Tensor& ga = self.inputs[0]->grad;
      for (int i = 0; i < g.size(); ++i) ga[as ? 0 : i] += g[i] / tb[bs ? 0 : i];
    }
    if (self.inputs[1]->requires_grad) {
      Tensor& gb = self.inputs[1]->grad;
      for (int i = 0; i < g.size(); ++i) {
        const double bv = tb[bs ? 0 : i];
        gb[bs ? 0 : i] -= g[i] * ta[as ? 0 : i] / (bv * bv);
      }
    }
  }));
}

// ---- elementwise unary ----

namespace {

// value_fn maps x to f(x); deriv_fn maps (x, f(x)) to f'(x).
Var unary_op(const Var& a, const char* op, double (*value_fn)(double),
             double (*deriv_fn)(double, double)) {
  auto na = checked(a, op);
  const Tensor& ta = na->value;
  Tensor out(ta.shape());
  for (int i = 0; i < ta.size(); ++i) out[i] = value_fn(ta[i]);
  return Var(make_node(std::move(out), {na}, [deriv_fn](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    const Tensor& x = self.inputs[0]->value;
    Tensor& gx = self.inputs[0]->grad;
    for (int i = 0; i < x.size(); ++i) gx[i] += self.grad[i] * deriv_fn(x[i], self.value[i]);
  }));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var neg(const Var& a) {
  return unary_op(a, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var vlog(const Var& a) {
  auto na = checked(a, "log");
  for (int i = 0; i < na->value.size(); ++i)
    if (!(na->value[i] > 0.0)) throw std::domain_error("log: non-positive input");
  return unary_op(a, "log", [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Var vexp(const Var& a) {
  return unary_op(a, "exp", [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Var vabs(const Var& a) {
  return unary_op(a, "abs", [](double x) { return std::fabs(x); },
                  [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var clamp(const Var& a, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  auto na = checked(a, "clamp");
  const Tensor& ta = na->value;
  Tensor out(ta.shape());
  for (int i = 0; i < ta.size(); ++i) out[i] = std::min(std::max(ta[i], lo), hi);
  return Var(make_node(std::move(out), {na}, [lo, hi](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    const Tensor& x = self.inputs[0]->value;
    Tensor& gx = self.inputs[0]->grad;
    for (int i = 0; i < x.size(); ++i)
      if (x[i] >= lo && x[i] <= hi) gx[i] += self.grad[i];
  }));
}

Var sigmoid(const Var& a) {
  return unary_op(a, "sigmoid", [](double x) { return stable_sigmoid(x); },
                  [](double, double y) { return y * (1.0 - y); });
}

Var softplus(const Var& a) {
  return unary_op(a, "softplus",
                  [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); },
                  [](double x, double) { return stable_sigmoid(x); });
}

Var elu(const Var& a) {
  return unary_op(a, "elu", [](double x) { return x > 0.0 ? x : std::expm1(x); },
                  [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

Var relu(const Var& a) {
  return unary_op(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                  [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var vpow(const Var& a, double exponent) {
  auto na = checked(a, "pow");
  const bool integral = exponent == std::nearbyint(exponent);
  for (int i = 0; i < na->value.size(); ++i) {
    const double x = na->value[i];
    if (x < 0.0 && !integral) throw std::domain_error("pow: negative base with fractional exponent");
    if (x == 0.0 && exponent < 0.0) throw std::domain_error("pow: zero base with negative exponent");
  }
  const Tensor& ta = na->value;
  Tensor out(ta.shape());
  for (int i = 0; i < ta.size(); ++i) out[i] = std::pow(ta[i], exponent);
  return Var(make_node(std::move(out), {na}, [exponent](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    const Tensor& x = self.inputs[0]->value;
    Tensor& gx = self.inputs[0]->grad;
    for (int i = 0; i < x.size(); ++i)
      gx[i] += self.grad[i] * exponent * std::pow(x[i], exponent - 1.0);
  }));
}

Var square(const Var& a) {
  return unary_op(a, "square", [](double x) { return x * x; },
                  [](double x, double) { return 2.0 * x; });
}

Var vsqrt(const Var& a) {
  auto na = checked(a, "sqrt");
  for (int i = 0; i < na->value.size(); ++i)
    if (na->value[i] < 0.0) throw std::domain_error("sqrt: negative input");
  return unary_op(a, "sqrt", [](double x) { return std::sqrt(x); },
                  [](double, double y) { return 0.5 / y; });
}

Var map_unary(const Var& a, std::function<double(double)> f, std::function<double(double)> df,
              const char* label) {
  auto na = checked(a, label);
  const Tensor& ta = na->value;
  Tensor out(ta.shape());
  for (int i = 0; i < ta.size(); ++i) out[i] = f(ta[i]);
  return Var(make_node(std::move(out), {na}, [df = std::move(df)](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    const Tensor& x = self.inputs[0]->value;
    Tensor& gx = self.inputs[0]->grad;
    for (int i = 0; i < x.size(); ++i) gx[i] += self.grad[i] * df(x[i]);
  }));
}

Var operator+(const Var& a, const Var& b) { return add(a, b); }
Var operator-(const Var& a, const Var& b) { return sub(a, b); }
Var operator*(const Var& a, const Var& b) { return mul(a, b); }
Var operator/(const Var& a, const Var& b) { return div(a, b); }
Var operator+(const Var& a, double b) { return add(a, Var::scalar(b)); }
Var operator+(double a, const Var& b) { return add(Var::scalar(a), b); }
Var operator-(const Var& a, double b) { return sub(a, Var::scalar(b)); }
Var operator-(double a, const Var& b) { return sub(Var::scalar(a), b); }
Var operator*(const Var& a, double b) { return mul(a, Var::scalar(b)); }
Var operator*(double a, const Var& b) { return mul(Var::scalar(a), b); }
Var operator/(const Var& a, double b) { return div(a, Var::scalar(b)); }
Var operator/(double a, const Var& b) { return div(Var::scalar(a), b); }
Var operator-(const Var& a) { return neg(a); }

// ---- reductions ----

Var sum(const Var& a) {
  auto na = checked(a, "sum");
  double s = 0.0;
  for (int i = 0; i < na->value.size(); ++i) s += na->value[i];
  return Var(make_node(Tensor::scalar(s), {na}, [](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& gx = self.inputs[0]->grad;
    const double g = self.grad[0];
    for (int i = 0; i < gx.size(); ++i) gx[i] += g;
  }));
}

Var mean(const Var& a) {
  auto na = checked(a, "mean");
  const int n = na->value.size();
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += na->value[i];
  return Var(make_node(Tensor::scalar(s / n), {na}, [n](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& gx = self.inputs[0]->grad;
    const double g = self.grad[0] / n;
    for (int i = 0; i < gx.size(); ++i) gx[i] += g;
  }));
}

namespace {

Var axis_reduce(const Var& a, int axis, const char* op, bool is_mean) {
  auto na = checked(a, op);
  axis = checked_axis(a, axis, op);
  int outer, dim, inner;
  axis_strides(a.shape(), axis, outer, dim, inner);
  Tensor out(drop_axis(a.shape(), axis));
  const Tensor& x = na->value;
  for (int o = 0; o < outer; ++o)
    for (int i = 0; i < inner; ++i) {
      double s = 0.0;
      for (int k = 0; k < dim; ++k) s += x[(o * dim + k) * inner + i];
      out[o * inner + i] = is_mean ? s / dim : s;
    }
  return Var(make_node(std::move(out), {na}, [outer, dim, inner, is_mean](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& gx = self.inputs[0]->grad;
    const Tensor& g = self.grad;
    const double scale = is_mean ? 1.0 / dim : 1.0;
    for (int o = 0; o < outer; ++o)
      for (int i = 0; i < inner; ++i) {
        const double gv = g[o * inner + i] * scale;
        for (int k = 0; k < dim; ++k) gx[(o * dim + k) * inner + i] += gv;
      }
  }));
}

Var axis_extremum(const Var& a, int axis, const char* op, bool is_min) {
  auto na = checked(a, op);
  axis = checked_axis(a, axis, op);
  int outer, dim, inner;
  axis_strides(a.shape(), axis, outer, dim, inner);
  Tensor out(drop_axis(a.shape(), axis));
  std::vector<int> arg(static_cast<size_t>(outer * inner));
  const Tensor& x = na->value;
  for (int o = 0; o < outer; ++o)
    for (int i = 0; i < inner; ++i) {
      int best_k = 0;
      double best = x[(o * dim + 0) * inner + i];
      for (int k = 1; k < dim; ++k) {
        const double v = x[(o * dim + k) * inner + i];
        if (is_min ? (v < best) : (v > best)) {
          best = v;
          best_k = k;
        }
      }
      out[o * inner + i] = best;
      arg[static_cast<size_t>(o * inner + i)] = best_k;
    }
  return Var(make_node(std::move(out), {na}, [outer, dim, inner, arg = std::move(arg)](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& gx = self.inputs[0]->grad;
    const Tensor& g = self.grad;
    for (int o = 0; o < outer; ++o)
      for (int i = 0; i < inner; ++i) {
        const int k = arg[static_cast<size_t>(o * inner + i)];
        gx[(o * dim + k) * inner + i] += g[o * inner + i];
      }
  }));
}

}  // namespace

Var sum_along(const Var& a, int axis) { return axis_reduce(a, axis, "sum_along", false); }
Var mean_along(const Var& a, int axis) { return axis_reduce(a, axis, "mean_along", true); }
Var min_along(const Var& a, int axis) { return axis_extremum(a, axis, "min_along", true); }
Var max_along(const Var& a, int axis) { return axis_extremum(a, axis, "max_along", false); }

Var median(const Var& a) {
  auto na = checked(a, "median");
  const int n = na->value.size();
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const Tensor& x = na->value;
  std::sort(order.begin(), order.end(), [&x](int i, int j) { return x[i] < x[j]; });
  // Even counts average the two middle order statistics, matching median_of.
  const int hi = order[static_cast<size_t>(n / 2)];
  const int lo = order[static_cast<size_t>((n - 1) / 2)];
  const double value = 0.5 * (x[lo] + x[hi]);
  return Var(make_node(Tensor::scalar(value), {na}, [lo, hi](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& gx = self.inputs[0]->grad;
    const double g = self.grad[0];
    if (lo == hi) {
      gx[lo] += g;
    } else {
      gx[lo] += 0.5 * g;
      gx[hi] += 0.5 * g;
    }
  }));
}

// ---- structure ----

Var reshape(const Var& a, Shape shape) {
  auto na = checked(a, "reshape");
  if (shape_size(shape) != na->value.size())
    throw std::invalid_argument("reshape: size mismatch from " + shape_str(na->value.shape()) +
                                " to " + shape_str(shape));
  Tensor out(std::move(shape), na->value.values());
  return Var(make_node(std::move(out), {na}, [](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& gx = self.inputs[0]->grad;
    for (int i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  }));
}

Var slice(const Var& a, int axis, int start, int length) {
  auto na = checked(a, "slice");
  axis = checked_axis(a, axis, "slice");
  const Shape& s = a.shape();
  if (length <= 0 || start < 0 || start + length > s[axis])
    throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                std::to_string(start + length) + ") out of bounds for axis size " +
                                std::to_string(s[axis]));
  int outer, dim, inner;
  axis_strides(s, axis, outer, dim, inner);
  Shape os = s;
  os[axis] = length;
  Tensor out(os);
  const Tensor& x = na->value;
  for (int o = 0; o < outer; ++o)
    for (int j = 0; j < length; ++j)
      for (int i = 0; i < inner; ++i)
        out[(o * length + j) * inner + i] = x[(o * dim + start + j) * inner + i];
  return Var(make_node(std::move(out), {na}, [outer, dim, inner, start, length](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& gx = self.inputs[0]->grad;
    const Tensor& g = self.grad;
    for (int o = 0; o < outer; ++o)
      for (int j = 0; j < length; ++j)
        for (int i = 0; i < inner; ++i)
          gx[(o * dim + start + j) * inner + i] += g[(o * length + j) * inner + i];
  }));
}

Var stack(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack: empty input");
  std::vector<std::shared_ptr<Node>> nodes;
  nodes.reserve(parts.size());
  for (const auto& p : parts) nodes.push_back(checked(p, "stack"));
  const Shape& base = nodes[0]->value.shape();
  for (const auto& n : nodes)
    if (!same_shape(n->value.shape(), base))
      throw std::invalid_argument("stack: mismatched part shapes");
  const int part_size = nodes[0]->value.size();
  Shape os;
  os.push_back(static_cast<int>(nodes.size()));
  os.insert(os.end(), base.begin(), base.end());
  Tensor out(os);
  for (size_t p = 0; p < nodes.size(); ++p)
    for (int i = 0; i < part_size; ++i) out[static_cast<int>(p) * part_size + i] = nodes[p]->value[i];
  return Var(make_node(std::move(out), std::move(nodes), [part_size](Node& self) {
    for (size_t p = 0; p < self.inputs.size(); ++p) {
      if (!self.inputs[p]->requires_grad) continue;
      Tensor& gx = self.inputs[p]->grad;
      for (int i = 0; i < part_size; ++i) gx[i] += self.grad[static_cast<int>(p) * part_size + i];
    }
  }));
}

Var matmul(const Var& a, const Var& b) {
  auto na = checked(a, "matmul");
  auto nb = checked(b, "matmul");
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out({m, n});
  const Tensor& ta = na->value;
  const Tensor& tb = nb->value;
  for (int i = 0; i < m; ++i)
    for (int t = 0; t < n; ++t) {
      double s = 0.0;
      for (int j = 0; j < k; ++j) s += ta[i * k + j] * tb[j * n + t];
      out[i * n + t] = s;
    }
  return Var(make_node(std::move(out), {na, nb}, [m, k, n](Node& self) {
    const Tensor& ta = self.inputs[0]->value;
    const Tensor& tb = self.inputs[1]->value;
    const Tensor& g = self.grad;
    if (self.inputs[0]->requires_grad) {
      Tensor& ga = self.inputs[0]->grad;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j) {
          double s = 0.0;
          for (int t = 0; t < n; ++t) s += g[i * n + t] * tb[j * n + t];
          ga[i * k + j] += s;
        }
    }
    if (self.inputs[1]->requires_grad) {
      Tensor& gb = self.inputs[1]->grad;
      for (int j = 0; j < k; ++j)
        for (int t = 0; t < n; ++t) {
          double s = 0.0;
          for (int i = 0; i < m; ++i) s += ta[i * k + j] * g[i * n + t];
          gb[j * n + t] += s;
        }
    }
  }));
}

Var transpose2d(const Var& a) {
  auto na = checked(a, "transpose2d");
  if (a.shape().size() != 2) throw std::invalid_argument("transpose2d: rank-2 input required");
  const int m = a.shape()[0], n = a.shape()[1];
  Tensor out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[j * m + i] = na->value[i * n + j];
  return Var(make_node(std::move(out), {na}, [m, n](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& gx = self.inputs[0]->grad;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) gx[i * n + j] += self.grad[j * m + i];
  }));
}

Var channel_bias(const Var& chw, const Var& bias) {
  auto na = checked(chw, "channel_bias");
  auto nb = checked(bias, "channel_bias");
  if (chw.shape().size() != 3 || bias.shape().size() != 1 || bias.shape()[0] != chw.shape()[0])
    throw std::invalid_argument("channel_bias: need (C,H,W) and (C), got " +
                                shape_str(chw.shape()) + " and " + shape_str(bias.shape()));
  const int c = chw.shape()[0], hw = chw.shape()[1] * chw.shape()[2];
  Tensor out(chw.shape());
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < hw; ++i) out[ch * hw + i] = na->value[ch * hw + i] + nb->value[ch];
  return Var(make_node(std::move(out), {na, nb}, [c, hw](Node& self) {
    const Tensor& g = self.grad;
    if (self.inputs[0]->requires_grad) acc_to(self.inputs[0]->grad, g);
    if (self.inputs[1]->requires_grad) {
      Tensor& gb = self.inputs[1]->grad;
      for (int ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (int i = 0; i < hw; ++i) s += g[ch * hw + i];
        gb[ch] += s;
      }
    }
  }));
}

// ---- image ops ----

Var conv2d(const Var& input, const Var& kernel, int stride, int pad, PadMode mode) {
  auto ni = checked(input, "conv2d");
  auto nk = checked(kernel, "conv2d");
  if (input.shape().size() != 3) throw std::invalid_argument("conv2d: input must be (C,H,W)");
  if (kernel.shape().size() != 4) throw std::invalid_argument("conv2d: kernel must be (O,I,k,k)");
  const int ci = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  const int co = kernel.shape()[0], ki = kernel.shape()[1], kh = kernel.shape()[2],
            kw = kernel.shape()[3];
  if (kh != kw) throw std::invalid_argument("conv2d: kernel must be square");
  if (kh % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd");
  if (ki != ci)
    throw std::invalid_argument("conv2d: kernel expects " + std::to_string(ki) +
                                " input channels, got " + std::to_string(ci));
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (pad < 0) throw std::invalid_argument("conv2d: negative padding");
  if (mode == PadMode::Reflect && (pad >= h || pad >= w))
    throw std::invalid_argument("conv2d: reflect padding requires pad < input dimension");
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  if (h + 2 * pad < kh || w + 2 * pad < kw)
    throw std::invalid_argument("conv2d: kernel larger than padded input");

  Tensor out({co, oh, ow});
  const double* x = ni->value.data();
  const double* k = nk->value.data();
  double* y = out.data();
  for (int oc = 0; oc < co; ++oc)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (int ic = 0; ic < ci; ++ic)
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = map_pad(oy * stride - pad + ky, h, mode);
            if (iy < 0) continue;
            const double* xrow = x + (ic * h + iy) * w;
            const double* krow = k + ((oc * ci + ic) * kh + ky) * kw;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = map_pad(ox * stride - pad + kx, w, mode);
              if (ix < 0) continue;
              acc += xrow[ix] * krow[kx];
            }
          }
        y[(oc * oh + oy) * ow + ox] = acc;
      }

  return Var(make_node(std::move(out), {ni, nk},
                       [ci, h, w, co, kh, kw, oh, ow, stride, pad, mode](Node& self) {
    const Tensor& x = self.inputs[0]->value;
    const Tensor& k = self.inputs[1]->value;
    const Tensor& g = self.grad;
    const bool need_x = self.inputs[0]->requires_grad;
    const bool need_k = self.inputs[1]->requires_grad;
    double* gx = need_x ? self.inputs[0]->grad.data() : nullptr;
    double* gk = need_k ? self.inputs[1]->grad.data() : nullptr;
    for (int oc = 0; oc < co; ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const double gv = g[(oc * oh + oy) * ow + ox];
          if (gv == 0.0) continue;
          for (int ic = 0; ic < ci; ++ic)
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = map_pad(oy * stride - pad + ky, h, mode);
              if (iy < 0) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = map_pad(ox * stride - pad + kx, w, mode);
                if (ix < 0) continue;
                const int xi = (ic * h + iy) * w + ix;
                const int kidx = ((oc * ci + ic) * kh + ky) * kw + kx;
                if (need_x) gx[xi] += gv * k[kidx];
                if (need_k) gk[kidx] += gv * x[xi];
              }
            }
        }
  }));
}

Var pixel_shuffle(const Var& a, int r) {
  auto na = checked(a, "pixel_shuffle");
  if (a.shape().size() != 3) throw std::invalid_argument("pixel_shuffle: input must be (C,H,W)");
  if (r < 1) throw std::invalid_argument("pixel_shuffle: r must be >= 1");
  const int c_in = a.shape()[0], h = a.shape()[1], w = a.shape()[2];
  if (c_in % (r * r) != 0)
    throw std::invalid_argument("pixel_shuffle: channels " + std::to_string(c_in) +
                                " not divisible by r^2=" + std::to_string(r * r));
  const int c_out = c_in / (r * r);
  Tensor out({c_out, h * r, w * r});
  const Tensor& x = na->value;
  for (int c = 0; c < c_out; ++c)
    for (int y = 0; y < h; ++y)
      for (int xcol = 0; xcol < w; ++xcol)
        for (int dy = 0; dy < r; ++dy)
          for (int dx = 0; dx < r; ++dx)
            out[(c * (h * r) + (r * y + dy)) * (w * r) + (r * xcol + dx)] =
                x[((c * r * r + dy * r + dx) * h + y) * w + xcol];
  return Var(make_node(std::move(out), {na}, [c_out, h, w, r](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& gx = self.inputs[0]->grad;
    const Tensor& g = self.grad;
    for (int c = 0; c < c_out; ++c)
      for (int y = 0; y < h; ++y)
        for (int xcol = 0; xcol < w; ++xcol)
          for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx)
              gx[((c * r * r + dy * r + dx) * h + y) * w + xcol] +=
                  g[(c * (h * r) + (r * y + dy)) * (w * r) + (r * xcol + dx)];
  }));
}

Var pixel_unshuffle(const Var& a, int r) {
  auto na = checked(a, "pixel_unshuffle");
  if (a.shape().size() != 3) throw std::invalid_argument("pixel_unshuffle: input must be (C,H,W)");
  if (r < 1) throw std::invalid_argument("pixel_unshuffle: r must be >= 1");
  const int c_in = a.shape()[0], hr = a.shape()[1], wr = a.shape()[2];
  if (hr % r != 0 || wr % r != 0)
    throw std::invalid_argument("pixel_unshuffle: spatial dims not divisible by r");
  const int h = hr / r, w = wr / r;
  Tensor out({c_in * r * r, h, w});
  const Tensor& x = na->value;
  for (int c = 0; c < c_in; ++c)
    for (int y = 0; y < h; ++y)
      for (int xcol = 0; xcol < w; ++xcol)
        for (int dy = 0; dy < r; ++dy)
          for (int dx = 0; dx < r; ++dx)
            out[((c * r * r + dy * r + dx) * h + y) * w + xcol] =
                x[(c * hr + (r * y + dy)) * wr + (r * xcol + dx)];
  return Var(make_node(std::move(out), {na}, [c_in, h, w, r, hr, wr](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& gx = self.inputs[0]->grad;
    const Tensor& g = self.grad;
    for (int c = 0; c < c_in; ++c)
      for (int y = 0; y < h; ++y)
        for (int xcol = 0; xcol < w; ++xcol)
          for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx)
              gx[(c * hr + (r * y + dy)) * wr + (r * xcol + dx)] +=
                  g[((c * r * r + dy * r + dx) * h + y) * w + xcol];
  }));
}

Var bilinear_sample(const Var& source, const Var& grid) {
  auto ns = checked(source, "bilinear_sample");
  auto ng = checked(grid, "bilinear_sample");
  if (source.shape().size() != 3) throw std::invalid_argument("bilinear_sample: source must be (C,H,W)");
  if (grid.shape().size() != 3 || grid.shape()[0] != 2)
    throw std::invalid_argument("bilinear_sample: grid must be (2,H,W)");
  const int c = source.shape()[0], h = source.shape()[1], w = source.shape()[2];
  const int gh = grid.shape()[1], gw = grid.shape()[2];
  const int npix = gh * gw;
  const Tensor& gt = ng->value;
  for (int i = 0; i < gt.size(); ++i)
    if (!std::isfinite(gt[i])) throw std::domain_error("bilinear_sample: non-finite grid coordinate");

  Tensor out({c, gh, gw});
  const Tensor& src = ns->value;
  for (int p = 0; p < npix; ++p) {
    const double rx = gt[p];
    const double ry = gt[npix + p];
    const double cx = std::clamp(rx, 0.0, static_cast<double>(w - 1));
    const double cy = std::clamp(ry, 0.0, static_cast<double>(h - 1));
    const int x0 = (w > 1) ? std::min(static_cast<int>(std::floor(cx)), w - 2) : 0;
    const int y0 = (h > 1) ? std::min(static_cast<int>(std::floor(cy)), h - 2) : 0;
    const int x1 = (w > 1) ? x0 + 1 : x0;
    const int y1 = (h > 1) ? y0 + 1 : y0;
    const double fx = cx - x0, fy = cy - y0;
    for (int ch = 0; ch < c; ++ch) {
      const double* plane = src.data() + ch * h * w;
      const double top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
      const double bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
      out[ch * npix + p] = top * (1.0 - fy) + bot * fy;
    }
  }

  return Var(make_node(std::move(out), {ns, ng}, [c, h, w, gh, gw](Node& self) {
    const Tensor& src = self.inputs[0]->value;
    const Tensor& gt = self.inputs[1]->value;
    const Tensor& g = self.grad;
    const bool need_src = self.inputs[0]->requires_grad;
    const bool need_grid = self.inputs[1]->requires_grad;
    double* gsrc = need_src ? self.inputs[0]->grad.data() : nullptr;
    double* ggrid = need_grid ? self.inputs[1]->grad.data() : nullptr;
    const int npix = gh * gw;
    for (int p = 0; p < npix; ++p) {
      const double rx = gt[p];
      const double ry = gt[npix + p];
      const double cx = std::clamp(rx, 0.0, static_cast<double>(w - 1));
      const double cy = std::clamp(ry, 0.0, static_cast<double>(h - 1));
      const int x0 = (w > 1) ? std::min(static_cast<int>(std::floor(cx)), w - 2) : 0;
      const int y0 = (h > 1) ? std::min(static_cast<int>(std::floor(cy)), h - 2) : 0;
      const int x1 = (w > 1) ? x0 + 1 : x0;
      const int y1 = (h > 1) ? y0 + 1 : y0;
      const double fx = cx - x0, fy = cy - y0;
      const bool x_inside = (w > 1) && rx >= 0.0 && rx <= static_cast<double>(w - 1);
      const bool y_inside = (h > 1) && ry >= 0.0 && ry <= static_cast<double>(h - 1);
      double gx_acc = 0.0, gy_acc = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const double gv = g[ch * npix + p];
        if (gv == 0.0) continue;
        const double* plane = src.data() + ch * h * w;
        if (need_src) {
          double* gplane = gsrc + ch * h * w;
          gplane[y0 * w + x0] += gv * (1.0 - fx) * (1.0 - fy);
          gplane[y0 * w + x1] += gv * fx * (1.0 - fy);
          gplane[y1 * w + x0] += gv * (1.0 - fx) * fy;
          gplane[y1 * w + x1] += gv * fx * fy;
        }
        if (need_grid) {
          if (x_inside)
            gx_acc += gv * ((plane[y0 * w + x1] - plane[y0 * w + x0]) * (1.0 - fy) +
                            (plane[y1 * w + x1] - plane[y1 * w + x0]) * fy);
          if (y_inside)
            gy_acc += gv * ((plane[y1 * w + x0] - plane[y0 * w + x0]) * (1.0 - fx) +
                            (plane[y1 * w + x1] - plane[y0 * w + x1]) * fx);
        }
      }
      if (need_grid) {
        ggrid[p] += gx_acc;
        ggrid[npix + p] += gy_acc;
      }
    }
  }));
}

Var resize_bilinear(const Var& source, int out_h, int out_w) {
  auto ns = checked(source, "resize_bilinear");
  if (source.shape().size() != 3) throw std::invalid_argument("resize_bilinear: source must be (C,H,W)");
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_bilinear: non-positive output size");
  const int h = source.shape()[1], w = source.shape()[2];
  if (out_h == h && out_w == w) return source;
  Tensor grid({2, out_h, out_w});
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int j = 0; j < out_h; ++j)
    for (int i = 0; i < out_w; ++i) {
      grid.at(0, j, i) = (i + 0.5) * sx - 0.5;
      grid.at(1, j, i) = (j + 0.5) * sy - 0.5;
    }
  return bilinear_sample(source, Var::constant(std::move(grid)));
}

// ---- backward / checking ----

GradientMap backward(const Var& loss) {
  auto root = checked(loss, "backward");
  if (root->value.size() != 1) throw std::logic_error("backward: loss must be scalar");
  GradientMap grads;
  if (!root->requires_grad) return grads;

  // Reachable grad-carrying subgraph, then reverse-topological by id (a
  // node's id always exceeds its inputs' ids).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> work{root.get()};
  seen.insert(root.get());
  while (!work.empty()) {
    Node* n = work.back();
    work.pop_back();
    order.push_back(n);
    for (const auto& in : n->inputs)
      if (in && in->requires_grad && seen.insert(in.get()).second) work.push_back(in.get());
  }
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->id > b->id; });

  for (Node* n : order) n->grad = Tensor(n->value.shape());
  root->grad[0] = 1.0;
  for (Node* n : order)
    if (n->backprop) n->backprop(*n);
  for (Node* n : order)
    if (n->leaf) grads.emplace(n->id, n->grad);
  return grads;
}

GradCheckReport grad_check(const std::function<Var()>& f, const std::vector<Var>& params, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  for (const auto& p : params)
    if (!p.valid() || !p.is_leaf() || !p.requires_grad())
      throw std::invalid_argument("grad_check: params must be grad-carrying leaves");

  Var loss = f();
  if (loss.value().size() != 1) throw std::logic_error("grad_check: f must return a scalar");
  if (!std::isfinite(loss.value()[0])) throw std::domain_error("grad_check: non-finite loss");
  GradientMap analytic = backward(loss);

  const auto eval = [&]() {
    const Var l = f();
    const double v = l.value()[0];
    if (!std::isfinite(v)) throw std::domain_error("grad_check: non-finite loss during probing");
    return v;
  };

  GradCheckReport report;
  report.per_param_error.reserve(params.size());
  for (const auto& p : params) {
    const auto it = analytic.find(p.id());
    double worst = 0.0;
    Tensor saved = p.value();
    for (int i = 0; i < saved.size(); ++i) {
      Tensor probe = saved;
      probe[i] = saved[i] + h;
      const_cast<Var&>(p).set_value(probe);
      const double up = eval();
      probe[i] = saved[i] - h;
      const_cast<Var&>(p).set_value(probe);
      const double down = eval();
      const_cast<Var&>(p).set_value(saved);
      const double numeric = (up - down) / (2.0 * h);
      const double exact = (it != analytic.end()) ? it->second[i] : 0.0;
      const double denom = std::max({std::fabs(exact), std::fabs(numeric), 1e-8});
      worst = std::max(worst, std::fabs(exact - numeric) / denom);
    }
    report.per_param_error.push_back(worst);
    report.max_rel_error = std::max(report.max_rel_error, worst);
  }
  return report;
}

}  // namespace photosfm
