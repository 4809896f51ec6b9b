// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "symconj/error.hpp"

namespace symconj {

using Shape = std::vector<std::int64_t>;

std::int64_t num_elements(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major tensor of doubles. Rank 0 is a scalar.
class Tensor {
 public:
  Tensor() : shape_{}, data_{0.0} {}
  Tensor(Shape shape, std::vector<double> data);
  explicit Tensor(double scalar) : shape_{}, data_{scalar} {}

  static Tensor scalar(double v) { return Tensor(v); }
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::int64_t rows, std::int64_t cols,
                       std::vector<double> values);
  static Tensor filled(Shape shape, double value);
  static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return filled(std::move(shape), 1.0); }
  static Tensor identity(std::int64_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::span<const double> data() const { return data_; }
  std::vector<double>& mutable_data() { return data_; }

  double operator[](std::size_t flat) const { return data_[flat]; }
  double at(std::initializer_list<std::int64_t> index) const;
  /// Value of a rank-0 (or single-element) tensor.
  double item() const;

  std::vector<std::int64_t> strides() const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// --- contraction -----------------------------------------------------------

/// Parsed "sub1,sub2,...->out" formula over the index alphabet a-z.
struct EinsumSpec {
  std::vector<std::string> inputs;
  std::string output;

  static EinsumSpec parse(std::string_view formula);
  std::string to_string() const;
};

/// Generic contraction; repeated indices within an operand take diagonals and
/// indices absent from the output are summed.
Tensor einsum(const EinsumSpec& spec, std::span<const Tensor> operands);
Tensor einsum(std::string_view formula, std::span<const Tensor> operands);
Tensor einsum(std::string_view formula, std::initializer_list<Tensor> operands);

/// Infers the output shape, validating extents. Throws ContractionError.
Shape einsum_shape(const EinsumSpec& spec, std::span<const Shape> shapes);

// --- elementwise -------------------------------------------------------------

enum class UnaryFn {
  kLog,
  kLog1p,
  kExp,
  kSqrt,
  kSquare,
  kReciprocal,
  kLogistic,
  kLogGamma,
  kDigamma,
  kNegate,
};

std::string_view unary_fn_name(UnaryFn fn);
Tensor map_unary(UnaryFn fn, const Tensor& x);

enum class BinaryFn { kAdd, kSubtract, kMultiply, kDivide, kPower };

/// Numpy-style trailing-dimension broadcast of two shapes.
Shape broadcast_shapes(const Shape& a, const Shape& b);
Tensor map_binary(BinaryFn fn, const Tensor& a, const Tensor& b);
Tensor broadcast_to(const Tensor& x, const Shape& shape);

// --- reductions and encodings ------------------------------------------------

Tensor one_hot(const Tensor& indices, std::int64_t depth);
Tensor sum_axis(const Tensor& x, std::size_t axis);
Tensor logsumexp(const Tensor& x, std::size_t axis);
double sum_all(const Tensor& x);

// --- dense linear algebra on the trailing two axes ---------------------------

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
Tensor cholesky(const Tensor& a);
/// Batched SPD inverse over the trailing two axes.
Tensor spd_inverse(const Tensor& a);
/// Batched log-determinant of SPD matrices; result has the batch shape.
Tensor spd_log_det(const Tensor& a);
/// Solves L y = b then L^T x = y for one (n, n) factor and an n-vector.
std::vector<double> cholesky_solve(const Tensor& lower, std::span<const double> b);

}  // namespace symconj
