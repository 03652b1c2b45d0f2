#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "svrnn/data.hpp"
#include "svrnn/parsing.hpp"

namespace svrnn {

enum class Precision { f32, f64 };

/// Everything that determines a training run. Serialized as `key = value`
/// lines; unknown keys and malformed values are rejected with the field name.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string stage = "1";  // 1, 2-eye, 2-nose, 2-mouth
  Variant variant = Variant::rnn_g;
  Precision precision = Precision::f32;
  std::string vocabulary = "coarse";  // coarse or fine (stage 1 only)
  std::size_t input_size = 64;        // stage 1 only
  int workers = 1;

  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double lr_decay = 0.1;
  std::size_t lr_step = 20;  // epochs between decays; 0 disables

  LossWeights loss;
  double boundary_ratio = 5;     // gate loss negatives per boundary pixel; 0 = all pixels
  double background_factor = 0;  // background pixels per foreground pixel; 0 = all pixels

  bool augment = true;
  AugmentConfig augmentation;
  double crop_jitter = 0.1;  // stage 2: box shift and scale jitter

  // Data: directories, or a synthetic set when train_dir is empty.
  std::string train_dir;
  std::string test_dir;
  SynthConfig synth;
  std::size_t synth_test_count = 100;

  std::size_t eval_size = 0;  // score at this square extent when nonzero

  void validate() const;
  std::string to_text() const;
  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
  /// Applies one `key=value` override.
  void set(std::string_view key, std::string_view value);

  bool fine() const { return vocabulary == "fine"; }
  const std::vector<std::string>& class_names() const;
  NetworkSpec network() const;
  /// Synthetic test split: same generator settings, disjoint seed.
  SynthConfig synth_test() const;
};

std::string_view to_string(Precision p);

}  // namespace svrnn
