#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include "svrnn/tensor.hpp"

namespace svrnn {

enum class Direction : std::uint8_t {
  left_to_right = 0,
  right_to_left = 1,
  top_to_bottom = 2,
  bottom_to_top = 3,
};

/// Fixed order used for parameter layout and for integrate_max tie-breaking.
inline constexpr std::array<Direction, 4> kDirections = {
    Direction::left_to_right, Direction::right_to_left, Direction::top_to_bottom,
    Direction::bottom_to_top};

std::string_view to_string(Direction d);
inline bool is_horizontal(Direction d) {
  return d == Direction::left_to_right || d == Direction::right_to_left;
}

/// Recurrence parameters for one scan direction: h_i = x_i + g_i * (omega h_{i-1} + bias).
template <typename T>
struct ScanParams {
  Matrix<T> omega;
  std::vector<T> bias;
  Direction direction = Direction::left_to_right;

  std::size_t dim() const { return bias.size(); }
};

/// Propagation coefficients in [0, 1], one per pixel and hidden channel.
template <typename T>
struct GateMap {
  Tensor<T> values;

  /// Logistic squashing of unconstrained gate features.
  static GateMap from_features(const Tensor<T>& features);
  /// Wraps explicit coefficients; throws if any lies outside [0, 1].
  static GateMap from_values(Tensor<T> values);
};

/// State recorded by one directional scan; consumed by exactly one backward call.
template <typename T>
struct ScanTape {
  Direction direction = Direction::left_to_right;
  bool gated = true;
  bool valid = false;
  Tensor<T> hidden;
  Tensor<T> gates;
};

template <typename T>
struct ScanGrads {
  Tensor<T> grad_x;
  Tensor<T> grad_g;  // empty for the ungated scan
  Matrix<T> grad_omega;
  std::vector<T> grad_bias;
};

/// Gated linear recurrence along p.direction, every row or column independently.
template <typename T>
Tensor<T> scan_forward_gated(const Tensor<T>& x, const Tensor<T>& g, const ScanParams<T>& p,
                             ScanTape<T>* tape = nullptr);

/// Ungated baseline: the gated scan with g == 1.
template <typename T>
Tensor<T> scan_forward_plain(const Tensor<T>& x, const ScanParams<T>& p,
                             ScanTape<T>* tape = nullptr);

/// Backpropagation through the scan recorded in `tape`. Invalidates the tape.
template <typename T>
ScanGrads<T> scan_backward(const Tensor<T>& grad_out, ScanTape<T>& tape, const ScanParams<T>& p);

template <typename T>
ScanGrads<T> scan_backward_gated(const Tensor<T>& grad_out, ScanTape<T>& tape,
                                 const ScanParams<T>& p);

template <typename T>
struct Integration {
  Tensor<T> out;
  std::vector<std::uint8_t> winner;  // index into kDirections per element
};

/// Node-wise max over the four directional maps; ties go to the earliest direction.
template <typename T>
Integration<T> integrate_max(const Tensor<T>& h_lr, const Tensor<T>& h_rl, const Tensor<T>& h_tb,
                             const Tensor<T>& h_bt);

template <typename T>
using SrnnParams = std::array<ScanParams<T>, 4>;

template <typename T>
struct SrnnTape {
  bool gated = true;
  bool valid = false;
  std::array<ScanTape<T>, 4> scans;
  Tensor<T> gates;
  std::vector<std::uint8_t> winner;
};

template <typename T>
struct SrnnGrads {
  Tensor<T> grad_x;
  Tensor<T> grad_gate_features;  // empty for the ungated layer
  std::array<Matrix<T>, 4> grad_omega;
  std::array<std::vector<T>, 4> grad_bias;
};

/// Four-direction spatial RNN layer with max integration. When `gate_features`
/// is null the ungated recurrence is used. `workers` > 1 runs the four scans
/// concurrently; results are identical either way.
template <typename T>
Tensor<T> srnn_forward(const Tensor<T>& x, const Tensor<T>* gate_features,
                       const SrnnParams<T>& params, SrnnTape<T>* tape = nullptr, int workers = 1);

template <typename T>
SrnnGrads<T> srnn_backward(const Tensor<T>& grad_out, SrnnTape<T>& tape,
                           const SrnnParams<T>& params, int workers = 1);

}  // namespace svrnn
