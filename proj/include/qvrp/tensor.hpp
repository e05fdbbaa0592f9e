#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "qvrp/errors.hpp"

namespace qvrp {

// Dense row-major tensor of doubles. Rank 1 and 2 are the common cases; a
// rank-1 tensor of length n is treated as a 1-by-n row where a matrix is
// expected.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(element_count(shape_), 0.0);
  }

  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != element_count(shape_))
      throw DimensionError("tensor data length does not match shape");
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = v;
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor row(std::vector<double> v) {
    int n = static_cast<int>(v.size());
    return Tensor({1, n}, std::move(v));
  }

  static Tensor matrix(int rows, int cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }

  static Tensor identity(int n) {
    Tensor t({n, n});
    for (int i = 0; i < n; ++i) t.data_[static_cast<size_t>(i) * n + i] = 1.0;
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }

  int rows() const {
    if (rank() == 1) return 1;
    if (rank() == 2) return shape_[0];
    throw DimensionError("rows(): tensor rank > 2");
  }

  int cols() const {
    if (rank() == 1) return shape_[0];
    if (rank() == 2) return shape_[1];
    throw DimensionError("cols(): tensor rank > 2");
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& at(int64_t i) { return data_[static_cast<size_t>(i)]; }
  double at(int64_t i) const { return data_[static_cast<size_t>(i)]; }
  double& at(int r, int c) { return data_[static_cast<size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data_[static_cast<size_t>(r) * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  static int64_t element_count(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int e : shape) {
      if (e <= 0) throw DimensionError("tensor extents must be positive");
      n *= e;
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw DimensionError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    double d = a.at(i) - b.at(i);
    if (d < 0) d = -d;
    if (d > m) m = d;
  }
  return m;
}

}  // namespace qvrp
