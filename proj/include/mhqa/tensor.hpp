#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mhqa {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

inline std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

/// Dense row-major array of doubles. Rank 1 is a vector, rank 2 a matrix.
struct Tensor {
  Shape shape;
  std::vector<double> values;

  Tensor() = default;

  explicit Tensor(Shape s, double fill = 0.0)
      : shape(std::move(s)), values(shape_volume(shape), fill) {}

  Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    if (values.size() != shape_volume(shape)) {
      throw ShapeError("tensor payload of " + std::to_string(values.size()) +
                       " values does not fit shape " + shape_string(shape));
    }
  }

  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

  bool all_finite() const {
    for (double v : values) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  double squared_norm() const {
    double s = 0.0;
    for (double v : values) s += v * v;
    return s;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

}  // namespace mhqa
