#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "svrnn/image.hpp"
#include "svrnn/label_map.hpp"
#include "svrnn/network.hpp"

namespace svrnn {

// Class vocabularies.
const std::vector<std::string>& coarse_vocabulary();  // background, skin, hair
const std::vector<std::string>& fine_vocabulary();    // 11 classes, see FineClass

enum FineClass : std::uint8_t {
  kBackground = 0,
  kSkin = 1,
  kLeftBrow = 2,
  kRightBrow = 3,
  kLeftEye = 4,
  kRightEye = 5,
  kNose = 6,
  kUpperLip = 7,
  kInnerMouth = 8,
  kLowerLip = 9,
  kHair = 10,
};

enum class Variant { cnn_s, cnn_deep, rnn, rnn_g };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view s);

/// Stage-1 whole-image network. `input_size` must be a multiple of 4 (square
/// input); 512 selects the deeper multi-face variant.
NetworkSpec build_stage1(std::size_t num_classes, std::size_t input_size,
                         Variant variant = Variant::rnn_g);
NetworkSpec build_stage1(const std::vector<std::string>& vocabulary, std::size_t input_size,
                         Variant variant = Variant::rnn_g);

enum class ComponentKind { eye_left, eye_right, nose, mouth };
inline constexpr std::array<ComponentKind, 4> kComponentOrder = {
    ComponentKind::eye_left, ComponentKind::eye_right, ComponentKind::nose,
    ComponentKind::mouth};

std::string_view to_string(ComponentKind k);
/// "eye", "nose" or "mouth": the stage-2 network that serves this component.
std::string_view component_net(ComponentKind k);
const std::vector<std::string>& component_vocabulary(std::string_view net);
/// Fine-vocabulary id painted for each component class (index 0, "other", maps to 0).
std::vector<std::uint8_t> component_to_fine(ComponentKind k);
/// Patch extents (height, width): 64x64 for eyes and nose, 32x64 for the mouth.
std::pair<std::size_t, std::size_t> component_patch(std::string_view net);

/// Stage-2 component network: 5 conv, 2 pool, 2 deconv, final head only.
NetworkSpec build_stage2(std::string_view net);

/// 0 on pixels with a 4-neighbour of a different class, 1 elsewhere,
/// kIgnoreLabel on ignored pixels. Ignored neighbours do not create boundaries.
LabelMap boundary_ground_truth(const LabelMap& labels);

/// Nearest-neighbour subsampling by an integer factor (pixel centres).
LabelMap downsample_labels(const LabelMap& labels, std::size_t factor);

struct LossWeights {
  double coarse = 1.0;
  double gate = 1.0;
  double final = 1.0;
};

/// Supervision for one batch, already at each head's resolution.
struct LossTargets {
  std::vector<LabelMap> labels;         // final head resolution
  std::vector<LabelMap> coarse_labels;  // coarse head resolution
  std::vector<LabelMap> gate_gt;        // gate head resolution, {0, 1, ignore}
  std::optional<LossMask> label_mask;   // final head
  std::optional<LossMask> coarse_mask;  // coarse head
  std::optional<LossMask> gate_mask;    // gate head; empty mask skips the gate term
};

template <typename T>
struct TotalLoss {
  T total = 0;
  T coarse = 0;
  T gate = 0;
  T final = 0;
  bool gate_skipped = false;
  std::map<std::string, Tensor<T>> grads;  // per head tensor name
};

template <typename T>
TotalLoss<T> total_loss(const NetworkSpec& spec, const std::map<std::string, Tensor<T>>& outputs,
                        const LossTargets& targets, const LossWeights& weights = {});

/// Builds coarse/gate targets from full-resolution labels for a given spec.
LossTargets make_targets(const NetworkSpec& spec, std::span<const LabelMap> labels);

struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // continuous coordinates, x1/y1 exclusive
  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
};

struct ComponentCrop {
  ComponentKind kind = ComponentKind::nose;
  Box source;
  std::size_t patch_h = 0;
  std::size_t patch_w = 0;

  /// Patch pixel coordinates -> source image coordinates.
  Affine patch_to_source() const;
};

/// Bounding box of pixels whose fine id belongs to `kind`; nullopt if none.
std::optional<Box> component_box_from_labels(const LabelMap& fine, ComponentKind kind);
/// Box estimated from the five keypoints (eye centres, nose centre, mouth corners).
Box component_box_from_points(std::span<const Point> points, ComponentKind kind);

/// Expands a foreground box by 20% of its extent on each side, grows it to the
/// patch aspect ratio, then shifts (and if needed shrinks) it into the image.
Box crop_rectangle(const Box& foreground, std::size_t patch_h, std::size_t patch_w,
                   std::size_t image_h, std::size_t image_w);

struct CropResult {
  Image patch;
  LabelMap patch_labels;  // component vocabulary; empty if no labels were given
  ComponentCrop crop;
};

/// Crops a component. The foreground box comes from `fine_labels` when given,
/// else from `points`. Throws if neither yields a non-empty region.
CropResult crop_component(const Image& image, const LabelMap* fine_labels, ComponentKind kind,
                          std::span<const Point> points);

/// Crops with an explicit foreground box (used for jittered training crops).
CropResult crop_component_box(const Image& image, const LabelMap* fine_labels, ComponentKind kind,
                              const Box& foreground);

/// Maps fine labels to a component net's vocabulary.
LabelMap fine_to_component(const LabelMap& fine, ComponentKind kind);

/// Maps a stage-1 coarse map into the fine vocabulary: background, skin, hair.
LabelMap coarse_to_fine(const LabelMap& coarse);

struct ComponentPrediction {
  LabelMap labels;  // component vocabulary, patch extents
  ComponentCrop crop;
};

/// Paints non-"other" component pixels over the coarse map (coarse or fine
/// vocabulary) in the order eyes, nose, mouth.
LabelMap compose_two_stage(const LabelMap& base, std::span<const ComponentPrediction> preds,
                           std::size_t base_classes);

}  // namespace svrnn
