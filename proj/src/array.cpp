#include "brst/array.hpp"

#include <cmath>
#include <sstream>

namespace brst {

static int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0) throw ShapeError("array extents must be positive, got " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

Array::Array(std::vector<int64_t> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Array::Array(std::vector<int64_t> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != static_cast<int64_t>(data_.size())) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " + shape_str());
  }
}

Array Array::full(std::vector<int64_t> shape, double value) {
  Array a(std::move(shape));
  for (double& v : a.data_) v = value;
  return a;
}

Array Array::eye(int64_t n) {
  Array a({n, n});
  for (int64_t i = 0; i < n; ++i) a.at(i, i) = 1.0;
  return a;
}

Array Array::uniform(std::vector<int64_t> shape, Rng& rng, double lo, double hi) {
  Array a(std::move(shape));
  for (double& v : a.data_) v = rng.uniform(lo, hi);
  return a;
}

bool Array::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Array::shape_str() const { return shape_to_string(shape_); }

int64_t Array::throw_not_2d() const {
  throw ShapeError("expected a 2-D array, got shape " + shape_str());
}

std::string shape_to_string(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

Array matmul_value(const Array& a, const Array& b) {
  if (a.ndim() != 2 || b.ndim() != 2) {
    throw ShapeError("matmul expects 2-D operands, got " + a.shape_str() + " and " + b.shape_str());
  }
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul inner extents disagree: " + a.shape_str() + " vs " + b.shape_str());
  }
  const int64_t m = a.rows(), k = a.cols(), n = b.cols();
  Array c({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  // ikj order: row-major friendly, k-accumulation ascending per element.
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    double* crow = pc + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = pb + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Array transpose_value(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("transpose expects a 2-D array, got " + a.shape_str());
  const int64_t m = a.rows(), n = a.cols();
  Array t({n, m});
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) t.at(j, i) = a.at(i, j);
  }
  return t;
}

double max_abs_diff(const Array& a, const Array& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("max_abs_diff shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
  }
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace brst
