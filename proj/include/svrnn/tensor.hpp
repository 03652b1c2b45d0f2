#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "svrnn/error.hpp"

namespace svrnn {

/// Extents of an N x C x H x W array. Lower-rank data uses leading 1s.
struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t size() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense NCHW array, row-major with W fastest.
///
/// Production code runs on Tensor<float>; gradient verification runs the
/// same templates on Tensor<double>.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    require(data_.size() == shape_.size(), ErrorKind::shape,
            "tensor data length " + std::to_string(data_.size()) +
                " does not match shape " + shape_.str());
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[index(n, c, y, x)];
  }
  T at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[index(n, c, y, x)];
  }

  /// Pointer to the H x W plane of sample n, channel c.
  T* plane(std::size_t n, std::size_t c) { return data() + (n * shape_.c + c) * shape_.plane(); }
  const T* plane(std::size_t n, std::size_t c) const {
    return data() + (n * shape_.c + c) * shape_.plane();
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }
  bool all_finite() const;

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

/// Dense row-major matrix.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, ErrorKind::shape,
            "matrix data length does not match " + std::to_string(rows_) + "x" +
                std::to_string(cols_));
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <typename T>
std::vector<T> matvec(const Matrix<T>& w, std::span<const T> v);

template <typename T>
std::pair<Tensor<T>, Tensor<T>> channel_split(const Tensor<T>& t);

template <typename T>
Tensor<T> channel_concat(const Tensor<T>& first, const Tensor<T>& second);

/// Induced 2-norm estimated by power iteration on w^T w.
template <typename T>
T spectral_norm(const Matrix<T>& w, int iterations = 50, double tolerance = 1e-7);

/// Rescales w so its induced 2-norm does not exceed `limit`.
template <typename T>
Matrix<T> spectral_norm_project(const Matrix<T>& w, T limit);

template <typename T>
void require_finite(const Tensor<T>& t, std::string_view what);

}  // namespace svrnn
