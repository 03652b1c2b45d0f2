#include "svrnn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace svrnn {

void ConvSpec::validate() const {
  require(in_channels >= 1 && out_channels >= 1, ErrorKind::shape,
          "convolution channel counts must be positive");
  require(kernel_h >= 1 && kernel_w >= 1 && stride >= 1, ErrorKind::shape,
          "kernel extents and stride must be at least 1");
}

std::pair<std::size_t, std::size_t> ConvSpec::conv_output(std::size_t h, std::size_t w) const {
  validate();
  const std::size_t ph = h + 2 * pad;
  const std::size_t pw = w + 2 * pad;
  require(ph >= kernel_h && pw >= kernel_w, ErrorKind::shape,
          "convolution kernel larger than padded input");
  require((ph - kernel_h) % stride == 0 && (pw - kernel_w) % stride == 0, ErrorKind::shape,
          "convolution output extent is not integral for input " + std::to_string(h) + "x" +
              std::to_string(w));
  return {(ph - kernel_h) / stride + 1, (pw - kernel_w) / stride + 1};
}

std::pair<std::size_t, std::size_t> ConvSpec::deconv_output(std::size_t h, std::size_t w) const {
  validate();
  require(h >= 1 && w >= 1, ErrorKind::shape, "deconvolution input must be non-empty");
  const std::size_t oh = (h - 1) * stride + kernel_h;
  const std::size_t ow = (w - 1) * stride + kernel_w;
  require(oh > 2 * pad && ow > 2 * pad, ErrorKind::shape, "deconvolution padding too large");
  return {oh - 2 * pad, ow - 2 * pad};
}

namespace {

struct Geometry {
  std::size_t channels, height, width;      // image side
  std::size_t kernel_h, kernel_w, stride, pad;
  std::size_t out_h, out_w;                 // column side
  std::size_t rows() const { return channels * kernel_h * kernel_w; }
  std::size_t cols() const { return out_h * out_w; }
};

// Valid output range [lo, hi) along one axis for kernel offset k.
inline void valid_range(std::size_t out, std::size_t in, std::size_t k, std::size_t stride,
                        std::size_t pad, std::size_t& lo, std::size_t& hi) {
  // o*stride + k - pad in [0, in)
  const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(stride);
  const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(pad);
  std::ptrdiff_t l = off >= 0 ? 0 : (-off + s - 1) / s;
  std::ptrdiff_t h = (static_cast<std::ptrdiff_t>(in) - off + s - 1) / s;
  l = std::clamp<std::ptrdiff_t>(l, 0, static_cast<std::ptrdiff_t>(out));
  h = std::clamp<std::ptrdiff_t>(h, l, static_cast<std::ptrdiff_t>(out));
  lo = static_cast<std::size_t>(l);
  hi = static_cast<std::size_t>(h);
}

template <typename T>
void im2col(const T* img, const Geometry& g, T* col) {
  const std::size_t P = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* src = img + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kernel_h; ++i) {
      std::size_t oy_lo, oy_hi;
      valid_range(g.out_h, g.height, i, g.stride, g.pad, oy_lo, oy_hi);
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        T* dst = col + ((c * g.kernel_h + i) * g.kernel_w + j) * P;
        std::size_t ox_lo, ox_hi;
        valid_range(g.out_w, g.width, j, g.stride, g.pad, ox_lo, ox_hi);
        std::fill(dst, dst + oy_lo * g.out_w, T(0));
        for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
          T* row = dst + oy * g.out_w;
          const T* srow = src + (oy * g.stride + i - g.pad) * g.width;
          std::fill(row, row + ox_lo, T(0));
          if (g.stride == 1) {
            const T* s0 = srow + ox_lo + j - g.pad;
            std::copy(s0, s0 + (ox_hi - ox_lo), row + ox_lo);
          } else {
            for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) row[ox] = srow[ox * g.stride + j - g.pad];
          }
          std::fill(row + ox_hi, row + g.out_w, T(0));
        }
        std::fill(dst + oy_hi * g.out_w, dst + P, T(0));
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const Geometry& g, T* img) {
  const std::size_t P = g.cols();
  std::fill(img, img + g.channels * g.height * g.width, T(0));
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* dst = img + c * g.height * g.width;
    for (std::size_t i = 0; i < g.kernel_h; ++i) {
      std::size_t oy_lo, oy_hi;
      valid_range(g.out_h, g.height, i, g.stride, g.pad, oy_lo, oy_hi);
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        const T* src = col + ((c * g.kernel_h + i) * g.kernel_w + j) * P;
        std::size_t ox_lo, ox_hi;
        valid_range(g.out_w, g.width, j, g.stride, g.pad, ox_lo, ox_hi);
        for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
          const T* row = src + oy * g.out_w;
          T* drow = dst + (oy * g.stride + i - g.pad) * g.width;
          for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) drow[ox * g.stride + j - g.pad] += row[ox];
        }
      }
    }
  }
}

template <typename T>
inline void axpy(std::size_t n, T a, const T* __restrict x, T* __restrict y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
inline T dot(std::size_t n, const T* __restrict x, const T* __restrict y) {
  T acc = 0;
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

// out (M x P) += A (M x K) * B (K x P)
template <typename T>
void gemm_nn(std::size_t M, std::size_t K, std::size_t P, const T* A, const T* B, T* out) {
  for (std::size_t m = 0; m < M; ++m) {
    T* orow = out + m * P;
    for (std::size_t k = 0; k < K; ++k) {
      const T a = A[m * K + k];
      if (a != T(0)) axpy(P, a, B + k * P, orow);
    }
  }
}

// out (K x P) += A^T (K x M) * B (M x P), with A stored M x K
template <typename T>
void gemm_tn(std::size_t M, std::size_t K, std::size_t P, const T* A, const T* B, T* out) {
  for (std::size_t m = 0; m < M; ++m) {
    const T* brow = B + m * P;
    for (std::size_t k = 0; k < K; ++k) {
      const T a = A[m * K + k];
      if (a != T(0)) axpy(P, a, brow, out + k * P);
    }
  }
}

// out (M x K) += A (M x P) * B^T (P x K), with B stored K x P
template <typename T>
void gemm_nt(std::size_t M, std::size_t K, std::size_t P, const T* A, const T* B, T* out) {
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t k = 0; k < K; ++k) out[m * K + k] += dot(P, A + m * P, B + k * P);
  }
}

void check_weight(const Shape& w, std::size_t a, std::size_t b, const ConvSpec& spec,
                  const char* what) {
  require(w == Shape{a, b, spec.kernel_h, spec.kernel_w}, ErrorKind::shape,
          std::string(what) + ": weight shape " + w.str() + " does not match spec");
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, std::span<const T> bias,
                         const ConvSpec& spec) {
  const Shape s = x.shape();
  require(s.c == spec.in_channels, ErrorKind::shape,
          "conv2d: input has " + std::to_string(s.c) + " channels, spec expects " +
              std::to_string(spec.in_channels));
  check_weight(w.shape(), spec.out_channels, spec.in_channels, spec, "conv2d");
  require(bias.empty() || bias.size() == spec.out_channels, ErrorKind::shape,
          "conv2d: bias length mismatch");
  const auto [oh, ow] = spec.conv_output(s.h, s.w);
  const Geometry g{s.c, s.h, s.w, spec.kernel_h, spec.kernel_w, spec.stride, spec.pad, oh, ow};
  const std::size_t K = g.rows();
  const std::size_t P = g.cols();

  Tensor<T> out(Shape{s.n, spec.out_channels, oh, ow});
  const bool identity_cols =
      spec.kernel_h == 1 && spec.kernel_w == 1 && spec.stride == 1 && spec.pad == 0;
  std::vector<T> col(identity_cols ? 0 : K * P);
  for (std::size_t n = 0; n < s.n; ++n) {
    T* o = out.plane(n, 0);
    for (std::size_t oc = 0; oc < spec.out_channels; ++oc) {
      std::fill(o + oc * P, o + (oc + 1) * P, bias.empty() ? T(0) : bias[oc]);
    }
    const T* cols = x.plane(n, 0);
    if (!identity_cols) {
      im2col(x.plane(n, 0), g, col.data());
      cols = col.data();
    }
    gemm_nn(spec.out_channels, K, P, w.data(), cols, o);
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& w,
                             const ConvSpec& spec) {
  const Shape s = x.shape();
  check_weight(w.shape(), spec.out_channels, spec.in_channels, spec, "conv2d_backward");
  const auto [oh, ow] = spec.conv_output(s.h, s.w);
  require(grad_out.shape() == Shape{s.n, spec.out_channels, oh, ow}, ErrorKind::shape,
          "conv2d_backward: grad_out shape " + grad_out.shape().str() +
              " does not match forward output");
  const Geometry g{s.c, s.h, s.w, spec.kernel_h, spec.kernel_w, spec.stride, spec.pad, oh, ow};
  const std::size_t K = g.rows();
  const std::size_t P = g.cols();
  const std::size_t M = spec.out_channels;

  ConvGrads<T> grads{Tensor<T>(s), Tensor<T>(w.shape()), std::vector<T>(M, T(0))};
  const bool identity_cols =
      spec.kernel_h == 1 && spec.kernel_w == 1 && spec.stride == 1 && spec.pad == 0;
  std::vector<T> col(identity_cols ? 0 : K * P);
  std::vector<T> gcol(identity_cols ? 0 : K * P);
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* go = grad_out.plane(n, 0);
    for (std::size_t m = 0; m < M; ++m) {
      T acc = 0;
      for (std::size_t p = 0; p < P; ++p) acc += go[m * P + p];
      grads.grad_b[m] += acc;
    }
    const T* cols = x.plane(n, 0);
    if (!identity_cols) {
      im2col(x.plane(n, 0), g, col.data());
      cols = col.data();
    }
    gemm_nt(M, K, P, go, cols, grads.grad_w.data());
    if (identity_cols) {
      gemm_tn(M, K, P, w.data(), go, grads.grad_x.plane(n, 0));
    } else {
      std::fill(gcol.begin(), gcol.end(), T(0));
      gemm_tn(M, K, P, w.data(), go, gcol.data());
      col2im(gcol.data(), g, grads.grad_x.plane(n, 0));
    }
  }
  return grads;
}

template <typename T>
Tensor<T> deconv2d_forward(const Tensor<T>& x, const Tensor<T>& w, std::span<const T> bias,
                           const ConvSpec& spec) {
  const Shape s = x.shape();
  require(s.c == spec.in_channels, ErrorKind::shape,
          "deconv2d: input has " + std::to_string(s.c) + " channels, spec expects " +
              std::to_string(spec.in_channels));
  check_weight(w.shape(), spec.in_channels, spec.out_channels, spec, "deconv2d");
  require(bias.empty() || bias.size() == spec.out_channels, ErrorKind::shape,
          "deconv2d: bias length mismatch");
  const auto [oh, ow] = spec.deconv_output(s.h, s.w);
  // Column geometry of the convolution this layer transposes (oh x ow -> h x w).
  const Geometry g{spec.out_channels, oh, ow, spec.kernel_h, spec.kernel_w,
                   spec.stride, spec.pad, s.h, s.w};
  const std::size_t K = g.rows();
  const std::size_t P = g.cols();

  Tensor<T> out(Shape{s.n, spec.out_channels, oh, ow});
  std::vector<T> col(K * P);
  for (std::size_t n = 0; n < s.n; ++n) {
    std::fill(col.begin(), col.end(), T(0));
    gemm_tn(spec.in_channels, K, P, w.data(), x.plane(n, 0), col.data());
    T* o = out.plane(n, 0);
    col2im(col.data(), g, o);
    if (!bias.empty()) {
      for (std::size_t c = 0; c < spec.out_channels; ++c) {
        T* plane = o + c * oh * ow;
        for (std::size_t i = 0; i < oh * ow; ++i) plane[i] += bias[c];
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> deconv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& w,
                               const ConvSpec& spec) {
  const Shape s = x.shape();
  check_weight(w.shape(), spec.in_channels, spec.out_channels, spec, "deconv2d_backward");
  const auto [oh, ow] = spec.deconv_output(s.h, s.w);
  require(grad_out.shape() == Shape{s.n, spec.out_channels, oh, ow}, ErrorKind::shape,
          "deconv2d_backward: grad_out shape " + grad_out.shape().str() +
              " does not match forward output");
  const Geometry g{spec.out_channels, oh, ow, spec.kernel_h, spec.kernel_w,
                   spec.stride, spec.pad, s.h, s.w};
  const std::size_t K = g.rows();
  const std::size_t P = g.cols();
  const std::size_t M = spec.in_channels;

  ConvGrads<T> grads{Tensor<T>(s), Tensor<T>(w.shape()),
                     std::vector<T>(spec.out_channels, T(0))};
  std::vector<T> gcol(K * P);
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* go = grad_out.plane(n, 0);
    for (std::size_t c = 0; c < spec.out_channels; ++c) {
      T acc = 0;
      for (std::size_t i = 0; i < oh * ow; ++i) acc += go[c * oh * ow + i];
      grads.grad_b[c] += acc;
    }
    im2col(go, g, gcol.data());
    gemm_nn(M, K, P, w.data(), gcol.data(), grads.grad_x.plane(n, 0));
    gemm_nt(M, K, P, x.plane(n, 0), gcol.data(), grads.grad_w.data());
  }
  return grads;
}

template <typename T>
PoolResult<T> maxpool2d_forward(const Tensor<T>& x, std::size_t window, std::size_t stride) {
  const Shape s = x.shape();
  require(window >= 1 && stride >= 1, ErrorKind::shape, "maxpool: window and stride must be >= 1");
  require(s.h % stride == 0 && s.w % stride == 0, ErrorKind::shape,
          "maxpool: extents " + std::to_string(s.h) + "x" + std::to_string(s.w) +
              " not divisible by stride " + std::to_string(stride));
  require(s.h >= window && s.w >= window, ErrorKind::shape, "maxpool: window exceeds input");
  const std::size_t oh = (s.h - window) / stride + 1;
  const std::size_t ow = (s.w - window) / stride + 1;
  PoolResult<T> r{Tensor<T>(Shape{s.n, s.c, oh, ow}), {}, s};
  r.argmax.resize(r.out.size());
  std::size_t o = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t base = x.index(n, c, 0, 0);
      const T* plane = x.data() + base;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
          std::size_t best = (oy * stride) * s.w + ox * stride;
          T best_v = plane[best];
          for (std::size_t i = 0; i < window; ++i) {
            for (std::size_t j = 0; j < window; ++j) {
              const std::size_t idx = (oy * stride + i) * s.w + ox * stride + j;
              if (plane[idx] > best_v) {
                best_v = plane[idx];
                best = idx;
              }
            }
          }
          r.out.data()[o] = best_v;
          r.argmax[o] = static_cast<std::uint32_t>(base + best);
        }
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& grad_out, const PoolResult<T>& pool) {
  require(grad_out.shape() == pool.out.shape(), ErrorKind::shape,
          "maxpool_backward: grad_out shape mismatch");
  Tensor<T> grad(pool.input_shape);
  for (std::size_t i = 0; i < grad_out.size(); ++i) grad.data()[pool.argmax[i]] += grad_out.data()[i];
  return grad;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = std::max(x.data()[i], T(0));
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& out) {
  require(grad_out.shape() == out.shape(), ErrorKind::shape, "relu_backward: shape mismatch");
  Tensor<T> grad(out.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    grad.data()[i] = out.data()[i] > T(0) ? grad_out.data()[i] : T(0);
  }
  return grad;
}

template <typename T>
Tensor<T> logistic(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x.data()[i];
    // Branch on sign so exp never overflows.
    if (v >= 0) {
      out.data()[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out.data()[i] = e / (T(1) + e);
    }
  }
  return out;
}

namespace {

struct Tap {
  std::size_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t factor) {
  std::vector<Tap> taps(in * factor);
  for (std::size_t o = 0; o < taps.size(); ++o) {
    double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, std::size_t factor) {
  require(factor >= 1, ErrorKind::shape, "upsample factor must be >= 1");
  const Shape s = x.shape();
  const auto ty = bilinear_taps(s.h, factor);
  const auto tx = bilinear_taps(s.w, factor);
  Tensor<T> out(Shape{s.n, s.c, s.h * factor, s.w * factor});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* in = x.plane(n, c);
      T* o = out.plane(n, c);
      for (std::size_t oy = 0; oy < ty.size(); ++oy) {
        const T* r0 = in + ty[oy].i0 * s.w;
        const T* r1 = in + ty[oy].i1 * s.w;
        const T wy = static_cast<T>(ty[oy].w1);
        for (std::size_t ox = 0; ox < tx.size(); ++ox) {
          const T wx = static_cast<T>(tx[ox].w1);
          const T top = r0[tx[ox].i0] * (T(1) - wx) + r0[tx[ox].i1] * wx;
          const T bottom = r1[tx[ox].i0] * (T(1) - wx) + r1[tx[ox].i1] * wx;
          o[oy * tx.size() + ox] = top * (T(1) - wy) + bottom * wy;
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> upsample_bilinear_backward(const Tensor<T>& grad_out, std::size_t factor,
                                     const Shape& input_shape) {
  const Shape s = input_shape;
  require(grad_out.shape() == Shape{s.n, s.c, s.h * factor, s.w * factor}, ErrorKind::shape,
          "upsample_bilinear_backward: grad_out shape mismatch");
  const auto ty = bilinear_taps(s.h, factor);
  const auto tx = bilinear_taps(s.w, factor);
  Tensor<T> grad(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* go = grad_out.plane(n, c);
      T* g = grad.plane(n, c);
      for (std::size_t oy = 0; oy < ty.size(); ++oy) {
        T* r0 = g + ty[oy].i0 * s.w;
        T* r1 = g + ty[oy].i1 * s.w;
        const T wy = static_cast<T>(ty[oy].w1);
        for (std::size_t ox = 0; ox < tx.size(); ++ox) {
          const T wx = static_cast<T>(tx[ox].w1);
          const T v = go[oy * tx.size() + ox];
          r0[tx[ox].i0] += v * (T(1) - wy) * (T(1) - wx);
          r0[tx[ox].i1] += v * (T(1) - wy) * wx;
          r1[tx[ox].i0] += v * wy * (T(1) - wx);
          r1[tx[ox].i1] += v * wy * wx;
        }
      }
    }
  }
  return grad;
}

namespace {

void check_targets(const Shape& s, std::span<const LabelMap> targets, const LossMask* mask,
                   const char* what) {
  require(targets.size() == s.n, ErrorKind::shape,
          std::string(what) + ": expected " + std::to_string(s.n) + " target maps");
  for (const auto& t : targets) {
    require(t.height == s.h && t.width == s.w && t.ids.size() == s.h * s.w, ErrorKind::shape,
            std::string(what) + ": target extents do not match logits " + s.str());
  }
  if (mask != nullptr) {
    require(mask->n == s.n && mask->height == s.h && mask->width == s.w, ErrorKind::shape,
            std::string(what) + ": mask shape does not match logits " + s.str());
  }
}

}  // namespace

template <typename T>
LossResult<T> softmax_ce(const Tensor<T>& logits, std::span<const LabelMap> targets,
                         const LossMask* mask) {
  const Shape s = logits.shape();
  check_targets(s, targets, mask, "softmax_ce");
  const std::size_t P = s.plane();
  const std::size_t C = s.c;

  std::size_t count = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < P; ++p) {
      const std::uint8_t t = targets[n].ids[p];
      if (t == kIgnoreLabel) continue;
      if (mask != nullptr && mask->include[n * P + p] == 0) continue;
      require(t < C, ErrorKind::value,
              "softmax_ce: class index " + std::to_string(t) + " out of range for " +
                  std::to_string(C) + " classes");
      ++count;
    }
  }
  require(count > 0, ErrorKind::value, "softmax_ce: empty loss mask");

  LossResult<T> r{T(0), Tensor<T>(s), count};
  const T inv = T(1) / static_cast<T>(count);
  double total = 0;
  std::vector<T> e(C);
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* z = logits.plane(n, 0);
    T* g = r.grad.plane(n, 0);
    for (std::size_t p = 0; p < P; ++p) {
      const std::uint8_t t = targets[n].ids[p];
      if (t == kIgnoreLabel) continue;
      if (mask != nullptr && mask->include[n * P + p] == 0) continue;
      T m = z[p];
      for (std::size_t c = 1; c < C; ++c) m = std::max(m, z[c * P + p]);
      // The maximal term contributes exactly 1; log1p keeps tiny remainders.
      T rest = 0;
      bool seen_max = false;
      for (std::size_t c = 0; c < C; ++c) {
        e[c] = std::exp(z[c * P + p] - m);
        if (!seen_max && z[c * P + p] == m) {
          seen_max = true;
        } else {
          rest += e[c];
        }
      }
      const T sum = T(1) + rest;
      const T lse = m + std::log1p(rest);
      total += static_cast<double>(lse - z[t * P + p]);
      for (std::size_t c = 0; c < C; ++c) {
        g[c * P + p] = (e[c] / sum - (c == t ? T(1) : T(0))) * inv;
      }
    }
  }
  r.loss = static_cast<T>(total / static_cast<double>(count));
  return r;
}

template <typename T>
LossResult<T> sigmoid_bce(const Tensor<T>& logit, std::span<const LabelMap> targets,
                          const LossMask* mask) {
  const Shape s = logit.shape();
  require(s.c == 1, ErrorKind::shape, "sigmoid_bce: expects a single logit channel");
  check_targets(s, targets, mask, "sigmoid_bce");
  const std::size_t P = s.plane();

  std::size_t count = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < P; ++p) {
      const std::uint8_t t = targets[n].ids[p];
      if (t == kIgnoreLabel) continue;
      if (mask != nullptr && mask->include[n * P + p] == 0) continue;
      require(t <= 1, ErrorKind::value, "sigmoid_bce: target must be 0 or 1");
      ++count;
    }
  }
  require(count > 0, ErrorKind::value, "sigmoid_bce: empty loss mask");

  LossResult<T> r{T(0), Tensor<T>(s), count};
  const T inv = T(1) / static_cast<T>(count);
  double total = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* z = logit.plane(n, 0);
    T* g = r.grad.plane(n, 0);
    for (std::size_t p = 0; p < P; ++p) {
      const std::uint8_t t = targets[n].ids[p];
      if (t == kIgnoreLabel) continue;
      if (mask != nullptr && mask->include[n * P + p] == 0) continue;
      const T v = z[p];
      const T target = static_cast<T>(t);
      total += static_cast<double>(std::max(v, T(0)) - v * target +
                                   std::log1p(std::exp(-std::abs(v))));
      const T sig = v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
      g[p] = (sig - target) * inv;
    }
  }
  r.loss = static_cast<T>(total / static_cast<double>(count));
  return r;
}

template <typename T>
void sgd_step(std::span<Param<T>> params, std::span<const Tensor<T>> grads, OptimState<T>& state) {
  require(params.size() == grads.size(), ErrorKind::shape,
          "sgd_step: parameter and gradient counts differ");
  if (state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (const auto& p : params) state.velocity.emplace_back(p.value.shape());
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    require(grads[i].shape() == p.value.shape() && state.velocity[i].shape() == p.value.shape(),
            ErrorKind::shape, "sgd_step: shape mismatch for parameter " + p.name);
    T* v = state.velocity[i].data();
    T* w = p.value.data();
    const T* g = grads[i].data();
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      v[k] = state.momentum * v[k] - state.learning_rate * (g[k] + state.weight_decay * w[k]);
      w[k] += v[k];
    }
    if (p.spectral) {
      const Shape s = p.value.shape();
      Matrix<T> m(s.h, s.w, std::vector<T>(p.value.values().begin(), p.value.values().end()));
      m = spectral_norm_project(m, T(1));
      std::copy(m.values().begin(), m.values().end(), w);
    }
  }
}

#define SVRNN_INSTANTIATE(T)                                                                     \
  template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, std::span<const T>,    \
                                       const ConvSpec&);                                          \
  template ConvGrads<T> conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                           const ConvSpec&);                                      \
  template Tensor<T> deconv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, std::span<const T>,  \
                                         const ConvSpec&);                                        \
  template ConvGrads<T> deconv2d_backward<T>(const Tensor<T>&, const Tensor<T>&,                  \
                                             const Tensor<T>&, const ConvSpec&);                  \
  template PoolResult<T> maxpool2d_forward<T>(const Tensor<T>&, std::size_t, std::size_t);        \
  template Tensor<T> maxpool2d_backward<T>(const Tensor<T>&, const PoolResult<T>&);               \
  template Tensor<T> relu_forward<T>(const Tensor<T>&);                                           \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> logistic<T>(const Tensor<T>&);                                               \
  template Tensor<T> upsample_bilinear<T>(const Tensor<T>&, std::size_t);                         \
  template Tensor<T> upsample_bilinear_backward<T>(const Tensor<T>&, std::size_t, const Shape&);  \
  template LossResult<T> softmax_ce<T>(const Tensor<T>&, std::span<const LabelMap>,               \
                                       const LossMask*);                                          \
  template LossResult<T> sigmoid_bce<T>(const Tensor<T>&, std::span<const LabelMap>,              \
                                        const LossMask*);                                         \
  template void sgd_step<T>(std::span<Param<T>>, std::span<const Tensor<T>>, OptimState<T>&);

SVRNN_INSTANTIATE(float)
SVRNN_INSTANTIATE(double)

}  // namespace svrnn
