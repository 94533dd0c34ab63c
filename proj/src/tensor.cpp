#include "sft/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "sft/errors.hpp"

namespace sft {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (const std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (const std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor shape " + shape_str(shape) + " has a zero dimension");
  }
}

}  // namespace

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)) {
  check_shape(shape);
  values.assign(numel(shape), fill);
}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  check_shape(shape);
  if (values.size() != numel(shape)) {
    throw DimensionError("tensor shape " + shape_str(shape) + " needs " + std::to_string(numel(shape)) +
                         " values, got " + std::to_string(values.size()));
  }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t cols = rows.size() == 0 ? 0 : rows.begin()->size();
  std::vector<double> v;
  v.reserve(rows.size() * cols);
  for (const auto& row : rows) {
    if (row.size() != cols) throw DimensionError("ragged matrix literal");
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), cols}, std::move(v));
}

void Tensor::zero_grad() { grad.assign(values.size(), 0.0); }

bool Tensor::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace sft
