#pragma once

#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "svrnn/config.hpp"
#include "svrnn/data.hpp"
#include "svrnn/metrics.hpp"
#include "svrnn/model_io.hpp"
#include "svrnn/network.hpp"

namespace svrnn {

/// One network-sized training or evaluation pair.
struct Example {
  Image image;
  LabelMap labels;
};

/// Dataset rows for the configured run: the train/test directories, or the
/// synthetic generator when no directory is configured.
std::vector<SampleRecord> training_records(const RunConfig& cfg);
std::vector<SampleRecord> test_records(const RunConfig& cfg);

/// Examples contributed by each record: two for the eye network, else one.
std::size_t examples_per_record(const RunConfig& cfg);

/// Builds example `item` of record `rec` at the network's input extents. With
/// an rng, applies augmentation (and crop jitter for stage 2). Returns nullopt
/// when a stage-2 record lacks the component.
std::optional<Example> make_example(const RunConfig& cfg, const SampleRecord& rec,
                                    std::size_t item, std::mt19937_64* rng);

/// Collapses fine labels to background/skin/hair.
LabelMap fine_to_coarse(const LabelMap& fine);

struct EpochLog {
  std::size_t epoch = 0;
  double learning_rate = 0;
  double loss = 0;
  double loss_coarse = 0;
  double loss_gate = 0;
  double loss_final = 0;
  double heldout_accuracy = -1;  // negative when there is no held-out set
  double seconds = 0;
};

template <typename T>
struct TrainResult {
  ParamStore<T> params;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

template <typename T>
TrainResult<T> train_network(const RunConfig& cfg, std::span<const SampleRecord> train,
                             std::span<const SampleRecord> heldout = {},
                             const EpochCallback& on_epoch = {});

/// Trains at the configured precision and returns a float model.
Model train_model(const RunConfig& cfg, std::span<const SampleRecord> train,
                  std::span<const SampleRecord> heldout = {}, const EpochCallback& on_epoch = {});

/// Resizes (aspect-preserving, zero padded at the right/bottom) to h x w.
/// `back` maps network pixels to image pixels.
Image fit_to_input(const Image& img, std::size_t h, std::size_t w, Affine* back = nullptr);

template <typename T>
struct Prediction {
  LabelMap labels;          // network extents
  Tensor<T> gate;           // sigmoid of the gate head, empty without one
  Tensor<T> final_logits;
};

/// Runs the network on an image already at its input extents.
template <typename T>
Prediction<T> predict(const Network<T>& net, const Image& input, int workers = 1);

/// Per-pixel argmax over channels of sample 0.
template <typename T>
LabelMap argmax_labels(const Tensor<T>& logits);

/// Predicts labels at the image's own extents (fit, run, map back).
template <typename T>
LabelMap predict_image(const Network<T>& net, const Image& img, int workers = 1);

/// Scores a network on records using the same example construction as
/// training (without augmentation). Stage-1 predictions are mapped back to
/// the record extents, or both sides to eval_size when configured.
template <typename T>
EvalReport evaluate(const Network<T>& net, const RunConfig& cfg,
                    std::span<const SampleRecord> records);

}  // namespace svrnn
