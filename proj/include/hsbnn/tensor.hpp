#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "hsbnn/errors.hpp"

namespace hsbnn {

// Dense float-64 tensor, row-major. Rank 0 (scalar) through rank 2 are used
// throughout; higher ranks are representable but no operation needs them.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

  Tensor(std::vector<int64_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_numel(shape_) != static_cast<int64_t>(data_.size())) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int64_t> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor vector(std::vector<double> data) {
    auto n = static_cast<int64_t>(data.size());
    return Tensor({n}, std::move(data));
  }

  static Tensor matrix(int64_t rows, int64_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<double> data;
    int64_t r = 0;
    int64_t c = -1;
    for (const auto& row : rows) {
      if (c < 0) c = static_cast<int64_t>(row.size());
      if (static_cast<int64_t>(row.size()) != c) {
        throw DimensionError("ragged rows in matrix literal");
      }
      data.insert(data.end(), row.begin(), row.end());
      ++r;
    }
    return Tensor({r, c < 0 ? 0 : c}, std::move(data));
  }

  const std::vector<int64_t>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  int64_t dim(int axis) const {
    if (axis < 0 || axis >= rank()) {
      throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                           std::to_string(rank()));
    }
    return shape_[axis];
  }

  int64_t rows() const { return dim(0); }
  int64_t cols() const { return dim(1); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double& operator()(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * cols() + j)]; }
  double operator()(int64_t i, int64_t j) const {
    return data_[static_cast<size_t>(i * cols() + j)];
  }

  // Value of a one-element tensor regardless of rank.
  double item() const {
    if (size() != 1) {
      throw ContractError("item() requires a one-element tensor, got " + shape_string(shape_));
    }
    return data_[0];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  static std::string shape_string(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) os << "x";
      os << shape[i];
    }
    os << "]";
    return os.str();
  }

  std::string shape_string() const { return shape_string(shape_); }

 private:
  static int64_t checked_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_string(shape));
      n *= d;
    }
    return n;
  }

  std::vector<int64_t> shape_;
  std::vector<double> data_;
};

}  // namespace hsbnn
