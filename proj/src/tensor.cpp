#include "lf2/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace lf2 {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ')';
  return out.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_size(shape_)) {
    throw InputError("tensor: " + std::to_string(data_.size()) + " values for shape " +
                     shape_string(shape_));
  }
}

std::span<double> Tensor::row(std::size_t i) {
  const std::size_t stride = shape_.empty() ? 0 : data_.size() / shape_[0];
  return {data_.data() + i * stride, stride};
}

std::span<const double> Tensor::row(std::size_t i) const {
  const std::size_t stride = shape_.empty() ? 0 : data_.size() / shape_[0];
  return {data_.data() + i * stride, stride};
}

void Tensor::reshape(Shape shape) {
  if (shape_size(shape) != data_.size()) {
    throw InputError("tensor: cannot reshape " + shape_string(shape_) + " to " +
                     shape_string(shape));
  }
  shape_ = std::move(shape);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace lf2
