#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "svrnn/label_map.hpp"
#include "svrnn/tensor.hpp"

namespace svrnn {

/// Geometry of a 2D convolution (or of the convolution a deconvolution transposes).
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  void validate() const;
  /// Output extents of the forward convolution; throws when not integral.
  std::pair<std::size_t, std::size_t> conv_output(std::size_t h, std::size_t w) const;
  /// Output extents of the transposed convolution: (H-1)*stride + k - 2*pad.
  std::pair<std::size_t, std::size_t> deconv_output(std::size_t h, std::size_t w) const;

  bool operator==(const ConvSpec&) const = default;
};

template <typename T>
struct ConvGrads {
  Tensor<T> grad_x;
  Tensor<T> grad_w;
  std::vector<T> grad_b;
};

/// Cross-correlation with symmetric zero padding. Weights are out x in x kh x kw.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, std::span<const T> bias,
                         const ConvSpec& spec);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& w,
                             const ConvSpec& spec);

/// Transposed convolution; the adjoint of conv2d_forward with the same weight tensor.
/// Weights are in x out x kh x kw (spec.in_channels is the deconvolution input).
template <typename T>
Tensor<T> deconv2d_forward(const Tensor<T>& x, const Tensor<T>& w, std::span<const T> bias,
                           const ConvSpec& spec);

template <typename T>
ConvGrads<T> deconv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& w,
                               const ConvSpec& spec);

template <typename T>
struct PoolResult {
  Tensor<T> out;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
  Shape input_shape;
};

/// Max pooling; ties go to the first element in row-major window order.
template <typename T>
PoolResult<T> maxpool2d_forward(const Tensor<T>& x, std::size_t window = 2, std::size_t stride = 2);

template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& grad_out, const PoolResult<T>& pool);

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x);

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& out);

template <typename T>
Tensor<T> logistic(const Tensor<T>& x);

/// Bilinear upsampling by an integer factor with half-pixel centers and edge clamping.
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, std::size_t factor);

template <typename T>
Tensor<T> upsample_bilinear_backward(const Tensor<T>& grad_out, std::size_t factor,
                                     const Shape& input_shape);

template <typename T>
struct LossResult {
  T loss = 0;
  Tensor<T> grad;
  std::size_t count = 0;
};

/// Mean softmax cross-entropy over included, non-ignored pixels.
/// `targets` holds one label map per batch item; `mask` may be null (all pixels).
template <typename T>
LossResult<T> softmax_ce(const Tensor<T>& logits, std::span<const LabelMap> targets,
                         const LossMask* mask = nullptr);

/// Mean binary cross-entropy on a single logit channel with {0,1} targets.
template <typename T>
LossResult<T> sigmoid_bce(const Tensor<T>& logit, std::span<const LabelMap> targets,
                          const LossMask* mask = nullptr);

/// A learnable tensor. `spectral` marks recurrent transition matrices, which are
/// projected back onto the unit spectral-norm ball after every update.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  bool spectral = false;
};

template <typename T>
struct OptimState {
  T learning_rate = T(0.01);
  T momentum = T(0.9);
  T weight_decay = T(5e-4);
  std::vector<Tensor<T>> velocity;
};

/// v <- mu*v - lr*(g + wd*p); p <- p + v.
template <typename T>
void sgd_step(std::span<Param<T>> params, std::span<const Tensor<T>> grads, OptimState<T>& state);

}  // namespace svrnn
