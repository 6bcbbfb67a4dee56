#include "photosfm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace photosfm {

int shape_size(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("empty shape");
  int n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("non-positive dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_size(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_size(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (static_cast<int>(data_.size()) != shape_size(shape_))
    throw std::invalid_argument("value count " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

int Tensor::dim(int axis) const {
  if (axis < 0 || axis >= rank()) throw std::invalid_argument("axis out of range");
  return shape_[static_cast<size_t>(axis)];
}

double& Tensor::at(int c, int y, int x) {
  return data_[static_cast<size_t>((c * shape_[1] + y) * shape_[2] + x)];
}

double Tensor::at(int c, int y, int x) const {
  return data_[static_cast<size_t>((c * shape_[1] + y) * shape_[2] + x)];
}

bool Tensor::same_shape_as(const Tensor& other) const { return shape_ == other.shape_; }

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

double Tensor::mean() const {
  if (data_.empty()) throw std::domain_error("mean of empty tensor");
  return sum() / static_cast<double>(data_.size());
}

double Tensor::min_value() const {
  if (data_.empty()) throw std::domain_error("min of empty tensor");
  return *std::min_element(data_.begin(), data_.end());
}

double Tensor::max_value() const {
  if (data_.empty()) throw std::domain_error("max of empty tensor");
  return *std::max_element(data_.begin(), data_.end());
}

double bilinear_at(const Tensor& chw, int c, double x, double y) {
  if (chw.rank() != 3) throw std::invalid_argument("bilinear_at expects a rank-3 tensor");
  const int h = chw.dim(1), w = chw.dim(2);
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  int x0 = (w > 1) ? std::min(static_cast<int>(std::floor(x)), w - 2) : 0;
  int y0 = (h > 1) ? std::min(static_cast<int>(std::floor(y)), h - 2) : 0;
  const double fx = x - x0, fy = y - y0;
  const int x1 = (w > 1) ? x0 + 1 : x0;
  const int y1 = (h > 1) ? y0 + 1 : y0;
  const double top = chw.at(c, y0, x0) * (1.0 - fx) + chw.at(c, y0, x1) * fx;
  const double bot = chw.at(c, y1, x0) * (1.0 - fx) + chw.at(c, y1, x1) * fx;
  return top * (1.0 - fy) + bot * fy;
}

double median_of(std::vector<double> v) {
  if (v.empty()) throw std::domain_error("median of empty range");
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace photosfm
