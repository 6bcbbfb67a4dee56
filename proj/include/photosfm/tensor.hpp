#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace photosfm {

// Dense row-major tensor of doubles. Shapes are small integer vectors;
// rank-3 tensors are (channels, height, width). A scalar is shape {1}.
using Shape = std::vector<int>;

int shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);
bool same_shape(const Shape& a, const Shape& b);

// How out-of-range coordinates are treated by padded convolutions.
enum class PadMode { Zero, Reflect, ClampEdge };

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);           // zero-filled
  Tensor(Shape shape, double fill);
  Tensor(Shape shape, std::vector<double> values);
  static Tensor scalar(double v);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const;
  int size() const { return static_cast<int>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](int i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int i) const { return data_[static_cast<size_t>(i)]; }

  // Rank-3 (C,H,W) accessors; bounds are the caller's responsibility.
  double& at(int c, int y, int x);
  double at(int c, int y, int x) const;

  bool same_shape_as(const Tensor& other) const;
  bool all_finite() const;
  double sum() const;
  double mean() const;
  double min_value() const;
  double max_value() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Clamp-to-edge bilinear lookup of channel c at continuous pixel position
// (x, y), where (0, 0) is the center of the top-left pixel. Shared by the
// differentiable sampler and the scene renderer so both agree exactly.
double bilinear_at(const Tensor& chw, int c, double x, double y);

// Median by value; averages the two middle elements for even counts.
// Throws std::domain_error on empty input.
double median_of(std::vector<double> v);

}  // namespace photosfm
