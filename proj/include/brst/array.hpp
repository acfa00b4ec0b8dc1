#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "brst/errors.hpp"
#include "brst/rng.hpp"

namespace brst {

// Dense row-major array of doubles. 2-D is the workhorse shape; the
// frontend convolutions use 3-D (channels, time, freq).
class Array {
 public:
  Array() = default;
  explicit Array(std::vector<int64_t> shape);
  Array(std::vector<int64_t> shape, std::vector<double> data);

  static Array zeros(std::vector<int64_t> shape) { return Array(std::move(shape)); }
  static Array full(std::vector<int64_t> shape, double value);
  static Array eye(int64_t n);
  // Uniform entries in [lo, hi).
  static Array uniform(std::vector<int64_t> shape, Rng& rng, double lo, double hi);

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  int64_t rows() const { return shape_.size() == 2 ? shape_[0] : throw_not_2d(); }
  int64_t cols() const { return shape_.size() == 2 ? shape_[1] : throw_not_2d(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  double& at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * shape_[1] + c)]; }
  double at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * shape_[1] + c)]; }

  bool same_shape(const Array& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  std::string shape_str() const;

 private:
  [[noreturn]] int64_t throw_not_2d() const;

  std::vector<int64_t> shape_;
  std::vector<double> data_;
};

// ---- value-level kernels (fixed reduction order, deterministic) ----

// C = A(m x k) * B(k x n). Accumulation over k is ascending per element.
Array matmul_value(const Array& a, const Array& b);
// C = A^T.
Array transpose_value(const Array& a);
// Max over all entries of |a - b|; shapes must agree.
double max_abs_diff(const Array& a, const Array& b);

std::string shape_to_string(const std::vector<int64_t>& shape);

}  // namespace brst
