#include "svrnn/tensor.hpp"

#include <cmath>
#include <cstdint>

namespace svrnn {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape error";
    case ErrorKind::value: return "value error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::io: return "I/O error";
    case ErrorKind::format: return "format error";
    case ErrorKind::config: return "configuration error";
  }
  return "error";
}

std::string Shape::str() const {
  return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
         std::to_string(w);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
void require_finite(const Tensor<T>& t, std::string_view what) {
  if (!t.all_finite()) {
    fail(ErrorKind::numeric, "non-finite value in " + std::string(what));
  }
}

template <typename T>
std::vector<T> matvec(const Matrix<T>& w, std::span<const T> v) {
  require(w.cols() == v.size(), ErrorKind::shape,
          "matvec: matrix has " + std::to_string(w.cols()) + " columns, vector has " +
              std::to_string(v.size()) + " entries");
  std::vector<T> out(w.rows(), T(0));
  for (std::size_t r = 0; r < w.rows(); ++r) {
    T acc = 0;
    for (std::size_t c = 0; c < w.cols(); ++c) acc += w(r, c) * v[c];
    out[r] = acc;
  }
  for (T x : out) {
    if (!std::isfinite(x)) fail(ErrorKind::numeric, "matvec produced a non-finite value");
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> channel_split(const Tensor<T>& t) {
  const Shape s = t.shape();
  require(s.c % 2 == 0, ErrorKind::shape,
          "channel_split needs an even channel count, got " + std::to_string(s.c));
  const std::size_t k = s.c / 2;
  const Shape half{s.n, k, s.h, s.w};
  Tensor<T> first(half), second(half);
  const std::size_t block = k * s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* src = t.plane(n, 0);
    std::copy(src, src + block, first.plane(n, 0));
    std::copy(src + block, src + 2 * block, second.plane(n, 0));
  }
  return {std::move(first), std::move(second)};
}

template <typename T>
Tensor<T> channel_concat(const Tensor<T>& first, const Tensor<T>& second) {
  const Shape a = first.shape();
  const Shape b = second.shape();
  require(a.n == b.n && a.h == b.h && a.w == b.w, ErrorKind::shape,
          "channel_concat: incompatible shapes " + a.str() + " and " + b.str());
  Tensor<T> out(Shape{a.n, a.c + b.c, a.h, a.w});
  for (std::size_t n = 0; n < a.n; ++n) {
    const T* pa = first.plane(n, 0);
    const T* pb = second.plane(n, 0);
    T* dst = out.plane(n, 0);
    dst = std::copy(pa, pa + a.c * a.plane(), dst);
    std::copy(pb, pb + b.c * b.plane(), dst);
  }
  return out;
}

template <typename T>
T spectral_norm(const Matrix<T>& w, int iterations, double tolerance) {
  const std::size_t rows = w.rows();
  const std::size_t cols = w.cols();
  if (rows == 0 || cols == 0) return T(0);

  // Fixed pseudo-random start so the estimate is reproducible and unlikely to be
  // orthogonal to the leading right singular vector.
  std::vector<double> v(cols);
  std::uint64_t state = 0x9e3779b97f4a7c15ull;
  for (auto& x : v) {
    state = state * 6364136223846793005ull + 1442695040888963407ull;
    x = 0.5 + static_cast<double>(state >> 11) / static_cast<double>(1ull << 53);
  }
  auto normalize = [](std::vector<double>& x) {
    double norm = 0;
    for (double e : x) norm += e * e;
    norm = std::sqrt(norm);
    if (norm > 0) {
      for (double& e : x) e /= norm;
    }
    return norm;
  };
  normalize(v);

  std::vector<double> u(rows);
  auto apply = [&] {
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0;
      for (std::size_t c = 0; c < cols; ++c) acc += static_cast<double>(w(r, c)) * v[c];
      u[r] = acc;
    }
  };

  double sigma = 0;
  for (int it = 0; it < iterations; ++it) {
    apply();
    double next = 0;
    for (double e : u) next += e * e;
    next = std::sqrt(next);
    if (next == 0) return T(0);
    for (std::size_t c = 0; c < cols; ++c) {
      double acc = 0;
      for (std::size_t r = 0; r < rows; ++r) acc += static_cast<double>(w(r, c)) * u[r];
      v[c] = acc;
    }
    normalize(v);
    const bool converged = std::abs(next - sigma) <= tolerance * next;
    sigma = next;
    if (converged) break;
  }
  apply();
  double final_norm = 0;
  for (double e : u) final_norm += e * e;
  return static_cast<T>(std::max(std::sqrt(final_norm), sigma));
}

template <typename T>
Matrix<T> spectral_norm_project(const Matrix<T>& w, T limit) {
  require(limit > T(0), ErrorKind::value, "spectral_norm_project: limit must be positive");
  const T sigma = spectral_norm(w);
  if (!(sigma > limit)) return w;
  Matrix<T> out = w;
  const T scale = limit / sigma;
  for (T& x : out.values()) x *= scale;
  return out;
}

#define SVRNN_INSTANTIATE(T)                                                          \
  template class Tensor<T>;                                                           \
  template void require_finite<T>(const Tensor<T>&, std::string_view);                \
  template std::vector<T> matvec<T>(const Matrix<T>&, std::span<const T>);             \
  template std::pair<Tensor<T>, Tensor<T>> channel_split<T>(const Tensor<T>&);         \
  template Tensor<T> channel_concat<T>(const Tensor<T>&, const Tensor<T>&);            \
  template T spectral_norm<T>(const Matrix<T>&, int, double);                         \
  template Matrix<T> spectral_norm_project<T>(const Matrix<T>&, T);

SVRNN_INSTANTIATE(float)
SVRNN_INSTANTIATE(double)

}  // namespace svrnn
