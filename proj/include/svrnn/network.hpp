#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "svrnn/layers.hpp"
#include "svrnn/spatial_rnn.hpp"
#include "svrnn/tensor.hpp"

namespace svrnn {

enum class LayerKind { conv, deconv, pool, split, srnn, upsample };

std::string_view to_string(LayerKind kind);

/// One line of a network description:
///   <kind> <outputs> <- <inputs> key=value ...
/// Outputs and inputs are comma-separated tensor names.
struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  std::vector<std::string> outputs;
  std::vector<std::string> inputs;
  std::size_t out_channels = 0;  // conv, deconv
  std::size_t kernel = 1;        // conv, deconv
  std::size_t stride = 1;        // conv, deconv, pool
  std::size_t pad = 0;           // conv, deconv
  bool relu = false;             // conv, deconv
  bool gated = true;             // srnn
  std::size_t factor = 2;        // upsample
  bool gate_head_bias = false;   // conv: initialize bias to +1

  const std::string& output() const { return outputs.front(); }
  bool operator==(const LayerSpec&) const = default;
};

/// Names of the tensors supervised by the loss. `coarse` and `gate` are empty
/// for networks with only a final head.
struct HeadNames {
  std::string coarse;
  std::string gate;
  std::string final;
  bool operator==(const HeadNames&) const = default;
};

struct ParamShape {
  std::string name;
  Shape shape;
  bool spectral = false;
  bool gate_bias = false;
};

struct NetworkSpec {
  std::string stage;    // "1", "2-eye", "2-nose", "2-mouth"
  std::string variant;  // "CNN-S", "CNN-Deep", "RNN", "RNN-G", or "component"
  std::vector<std::string> vocabulary;
  std::string input_name = "image";
  std::size_t in_channels = 3;
  std::size_t in_height = 0;
  std::size_t in_width = 0;
  std::vector<LayerSpec> layers;
  HeadNames heads;

  std::size_t num_classes() const { return vocabulary.size(); }

  /// Shape of every named tensor for the given batch size; throws on any mismatch.
  std::map<std::string, Shape> infer_shapes(std::size_t batch = 1) const;
  std::vector<ParamShape> param_shapes() const;
  std::size_t parameter_count() const;
  std::size_t count(LayerKind kind) const;

  std::string to_text() const;
  static NetworkSpec parse(std::string_view text);

  bool operator==(const NetworkSpec&) const = default;
};

/// Learnable tensors of a network in declaration order.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(const NetworkSpec& spec);

  /// Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases, +1 gate-head bias.
  void initialize(std::uint64_t seed);

  std::size_t size() const { return params_.size(); }
  std::span<Param<T>> params() { return params_; }
  std::span<const Param<T>> params() const { return params_; }
  Param<T>& operator[](std::size_t i) { return params_[i]; }
  const Param<T>& operator[](std::size_t i) const { return params_[i]; }
  const Param<T>& get(const std::string& name) const;
  Param<T>& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;

  /// Zero tensors shaped like every parameter.
  std::vector<Tensor<T>> zeros_like() const;

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : params_) out.add(Param<U>{p.name, p.value.template cast<U>(), p.spectral});
    return out;
  }

  void add(Param<T> p);

 private:
  std::vector<Param<T>> params_;
  std::vector<ParamShape> shapes_;
  std::map<std::string, std::size_t> index_;
};

template <typename T>
struct ForwardTape {
  std::map<std::string, Tensor<T>> values;
  std::map<std::string, PoolResult<T>> pools;
  std::map<std::string, SrnnTape<T>> scans;
};

/// Wall-clock seconds per layer for one forward (and optionally backward) pass.
struct LayerTiming {
  std::vector<std::string> names;
  std::vector<double> seconds;
  void add(const std::string& name, double s);
};

/// Executes a NetworkSpec over a parameter store.
template <typename T>
class Network {
 public:
  Network() = default;
  Network(NetworkSpec spec, ParamStore<T> params);

  const NetworkSpec& spec() const { return spec_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  /// Runs every layer; returns all named tensors. When `tape` is given it is
  /// filled with what backward() needs.
  std::map<std::string, Tensor<T>> forward(const Tensor<T>& input, ForwardTape<T>* tape = nullptr,
                                           LayerTiming* timing = nullptr, int workers = 1) const;

  /// Gradients for every parameter (declaration order) given gradients of the
  /// named head tensors. Consumes the tape.
  std::vector<Tensor<T>> backward(ForwardTape<T>& tape,
                                  const std::map<std::string, Tensor<T>>& head_grads,
                                  LayerTiming* timing = nullptr, int workers = 1) const;

  SrnnParams<T> srnn_params(const std::string& layer) const;

 private:
  NetworkSpec spec_;
  ParamStore<T> params_;
};

}  // namespace svrnn
