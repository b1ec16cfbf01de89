#include "tensor.hpp"

#include <cmath>
#include <sstream>

namespace snds::ad {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor: non-positive dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != static_cast<int64_t>(data_.size())) {
    throw ShapeError("tensor: data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str(shape_));
  }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("tensor: item() on non-scalar of shape " + shape_str(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

void Tensor::add_scaled(const Tensor& other, double coeff) {
  if (!same_shape(other)) {
    throw ShapeError("tensor: add_scaled shape mismatch " + shape_str(shape_) + " vs " + shape_str(other.shape_));
  }
  const double* src = other.data();
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += coeff * src[i];
}

}  // namespace snds::ad
