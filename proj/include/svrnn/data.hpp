#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "svrnn/image.hpp"
#include "svrnn/label_map.hpp"

namespace svrnn {

/// One dataset row. `points` holds the five keypoints (left eye, right eye,
/// nose, left mouth corner, right mouth corner) when known.
struct SampleRecord {
  Image image;
  LabelMap labels;
  std::vector<Point> points;
};

struct SynthConfig {
  std::uint64_t seed = 1;
  std::size_t count = 100;
  std::size_t height = 64;
  std::size_t width = 64;
  bool fine = false;  // 11-class vocabulary instead of background/skin/hair
  double clutter = 0.5;
  bool multi_face = false;
  std::size_t min_faces = 2;
  std::size_t max_faces = 6;

  void validate() const;
};

/// Record `index` of the dataset described by cfg; depends only on (seed, index).
SampleRecord generate_sample(const SynthConfig& cfg, std::size_t index);
std::vector<SampleRecord> generate_synthetic(const SynthConfig& cfg);

struct AugmentConfig {
  double max_rotation_deg = 15;
  double min_scale = 0.9;
  double max_scale = 1.1;
  double max_translate = 0.05;  // fraction of the extent
  double mirror_probability = 0.5;
};

struct AugmentParams {
  double rotation_deg = 0;
  double scale = 1;
  double tx = 0;  // fraction of width
  double ty = 0;  // fraction of height
  bool mirror = false;
};

AugmentParams draw_augment(std::mt19937_64& rng, const AugmentConfig& cfg = {});

/// Applies an affine + mirror transform about the image centre. Mirroring swaps
/// left/right classes when `fine` and swaps left/right keypoints.
SampleRecord apply_augment(const SampleRecord& rec, const AugmentParams& p, bool fine);

SampleRecord augment(const SampleRecord& rec, std::mt19937_64& rng, bool fine,
                     const AugmentConfig& cfg = {});

/// All boundary pixels (value 0) plus up to ratio x as many uniformly drawn
/// non-boundary pixels. No boundary pixels gives an empty mask.
LossMask boundary_sampling_mask(const LabelMap& gate_gt, double ratio, std::mt19937_64& rng);

/// All foreground pixels plus up to factor x as many uniformly drawn background
/// (id 0) pixels. No foreground gives an empty mask.
LossMask background_sampling_mask(const LabelMap& labels, double factor, std::mt19937_64& rng);

/// Concatenates single-image masks into one batch mask.
LossMask stack_masks(std::span<const LossMask> masks);

void save_dataset(const std::filesystem::path& dir, std::span<const SampleRecord> records);
/// Loads images/NNNN.png, labels/NNNN.png and optional points/NNNN.txt; ids
/// must be below num_classes or equal the ignore marker.
std::vector<SampleRecord> load_dataset(const std::filesystem::path& dir, std::size_t num_classes);

}  // namespace svrnn
