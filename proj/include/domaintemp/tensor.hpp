#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <vector>

#include "domaintemp/common.hpp"

namespace domaintemp {

// Dense row-major tensor. Training uses float, gradient verification double.
template <typename T>
class Tensor {
 public:
  using Scalar = T;
  using MatMap = Eigen::Map<
      Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatMap = Eigen::Map<
      const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using VecMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
  using ConstVecMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> shape)
      : shape_(std::move(shape)), data_(checked_size(shape_), T(0)) {}
  Tensor(std::vector<std::int64_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_size(shape_))
      throw ShapeError("tensor data length does not match shape");
  }

  static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<std::int64_t> shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }
  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::initializer_list<std::int64_t> idx) { return data_[offset(idx)]; }
  const T& at(std::initializer_list<std::int64_t> idx) const { return data_[offset(idx)]; }

  // 2-d views (rows = first dim, cols = rest flattened).
  MatMap mat() { return MatMap(data_.data(), rows(), cols()); }
  ConstMatMap mat() const { return ConstMatMap(data_.data(), rows(), cols()); }
  MatMap as_mat(std::int64_t r, std::int64_t c) {
    if (static_cast<std::size_t>(r * c) != data_.size())
      throw ShapeError("as_mat: element count mismatch");
    return MatMap(data_.data(), r, c);
  }
  ConstMatMap as_mat(std::int64_t r, std::int64_t c) const {
    if (static_cast<std::size_t>(r * c) != data_.size())
      throw ShapeError("as_mat: element count mismatch");
    return ConstMatMap(data_.data(), r, c);
  }
  VecMap array() { return VecMap(data_.data(), data_.size()); }
  ConstVecMap array() const { return ConstVecMap(data_.data(), data_.size()); }

  std::int64_t rows() const { return shape_.empty() ? 1 : shape_[0]; }
  std::int64_t cols() const {
    std::int64_t c = 1;
    for (std::size_t i = 1; i < shape_.size(); ++i) c *= shape_[i];
    return c;
  }

  Tensor reshaped(std::vector<std::int64_t> shape) const {
    Tensor t;
    t.shape_ = std::move(shape);
    if (checked_size(t.shape_) != data_.size())
      throw ShapeError("reshape: element count mismatch");
    t.data_ = data_;
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape_.size(); ++i)
      os << shape_[i] << (i + 1 < shape_.size() ? "," : "");
    os << ")";
    return os.str();
  }

 private:
  static std::size_t checked_size(const std::vector<std::int64_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
      if (d < 0) throw ShapeError("negative dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }
  std::size_t offset(std::initializer_list<std::int64_t> idx) const {
    std::size_t off = 0;
    std::size_t k = 0;
    for (auto i : idx) {
      off = off * static_cast<std::size_t>(shape_[k]) + static_cast<std::size_t>(i);
      ++k;
    }
    return off;
  }

  std::vector<std::int64_t> shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace domaintemp
