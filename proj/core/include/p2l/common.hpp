// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace p2l {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;
using Seed = std::uint64_t;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A configuration value is outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced, or a numerical routine cannot proceed.
class NumericError : public Error {
 public:
  using Error::Error;
};

class SpdViolation : public NumericError {
 public:
  using NumericError::NumericError;
};

class OptimizationError : public NumericError {
 public:
  using NumericError::NumericError;
};

class SolverError : public NumericError {
 public:
  using NumericError::NumericError;
};

class TrainingError : public NumericError {
 public:
  using NumericError::NumericError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Row-major dimension descriptor. A flat vector conforms when its length
/// equals the product of the extents.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> dims) : dims_(dims) {}
  explicit Shape(std::vector<Index> dims) : dims_(std::move(dims)) {}

  static Shape flat(Index n) { return Shape{n}; }

  [[nodiscard]] Index size() const {
    Index n = 1;
    for (Index d : dims_) n *= d;
    return n;
  }
  [[nodiscard]] std::size_t rank() const { return dims_.size(); }
  [[nodiscard]] Index operator[](std::size_t i) const { return dims_.at(i); }
  [[nodiscard]] const std::vector<Index>& dims() const { return dims_; }
  [[nodiscard]] std::string to_string() const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<Index> dims_;
};

/// Height x width of a single-channel image.
struct ImageShape {
  Index height = 0;
  Index width = 0;

  [[nodiscard]] Index size() const { return height * width; }
  [[nodiscard]] Shape shape() const { return Shape{height, width}; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

[[nodiscard]] bool all_finite(const Vector& v);

}  // namespace p2l
