#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace sft {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. `grad` is empty until a backward pass (or
// zero_grad) allocates it; when present it always matches `values` in length.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool track_grad = false;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> v);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t size() const noexcept { return values.size(); }
  std::size_t rank() const noexcept { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }
  bool has_grad() const noexcept { return !grad.empty(); }

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  // Allocates (or clears) the gradient buffer.
  void zero_grad();
  bool all_finite() const;
};

}  // namespace sft
