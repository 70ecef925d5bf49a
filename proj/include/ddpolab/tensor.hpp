// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ddpolab {

/// Dense row-major tensor of doubles.
///
/// Most of the library works with rank-2 tensors (rows = batch entries);
/// rank-1 tensors appear as bias vectors and are broadcast over rows.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor scalar(double v) { return Tensor({1, 1}, v); }
  static Tensor row(std::span<const double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  // Rank-1 tensors behave as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row_span(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  bool all_finite() const;
  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t extent_product(std::span<const std::size_t> shape);

/// Value kernels shared by the traced and untraced code paths.
///
/// The taped operations compute their forward values with exactly these
/// functions, so an untraced evaluation reproduces a traced one bit for bit.
namespace kernels {

// out = a (r x k) * b (k x c), rank-1 b treated as k x 1 is not supported.
Tensor matmul(const Tensor& a, const Tensor& b);
// a^T * b and a * b^T, used by the backward pass.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Elementwise a + b. b may be a single row (broadcast over rows of a) or a
// single column (broadcast over columns).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor scale(const Tensor& a, double s);
// Row r of a multiplied by s[r].
Tensor scale_rows(const Tensor& a, std::span<const double> s);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor tanh(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor square(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);

// Sum of all entries as a 1x1 tensor.
Tensor sum(const Tensor& a);
// Per-row sum, rows x 1.
Tensor sum_rows(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_cols(std::span<const Tensor* const> parts);

}  // namespace kernels

}  // namespace ddpolab
