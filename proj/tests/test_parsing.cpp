#include <gtest/gtest.h>

#include <cmath>

#include "svrnn/data.hpp"
#include "svrnn/error.hpp"
#include "svrnn/parsing.hpp"

using namespace svrnn;

namespace {

LabelMap from_rows(const std::vector<std::vector<int>>& rows) {
  LabelMap l(rows.size(), rows[0].size());
  for (std::size_t y = 0; y < rows.size(); ++y)
    for (std::size_t x = 0; x < rows[y].size(); ++x) l.at(y, x) = std::uint8_t(rows[y][x]);
  return l;
}

// Filled ellipse of `id` on a background of 0.
LabelMap ellipse_labels(std::size_t h, std::size_t w, double cx, double cy, double rx, double ry,
                        std::uint8_t id) {
  LabelMap l(h, w, 0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
      if (dx * dx + dy * dy <= 1) l.at(y, x) = id;
    }
  return l;
}

bool is_component_class(std::uint8_t id) { return id >= kLeftBrow && id <= kLowerLip; }

}  // namespace

TEST(BoundaryGroundTruth, UniformMapHasNoBoundary) {
  const auto b = boundary_ground_truth(LabelMap(5, 7, 2));
  for (auto v : b.ids) EXPECT_EQ(v, 1);
}

TEST(BoundaryGroundTruth, VerticalTransitionMarksBothSides) {
  const auto b = boundary_ground_truth(
      from_rows({{0, 0, 1, 1}, {0, 0, 1, 1}, {0, 0, 1, 1}, {0, 0, 1, 1}}));
  // The two columns adjacent to the transition (1-based columns 2 and 3).
  EXPECT_EQ(b, from_rows({{1, 0, 0, 1}, {1, 0, 0, 1}, {1, 0, 0, 1}, {1, 0, 0, 1}}));
}

TEST(BoundaryGroundTruth, SinglePixelMarksItselfAndNeighbours) {
  LabelMap l(5, 5, 0);
  l.at(2, 2) = 3;
  EXPECT_EQ(boundary_ground_truth(l), from_rows({{1, 1, 1, 1, 1},
                                                 {1, 1, 0, 1, 1},
                                                 {1, 0, 0, 0, 1},
                                                 {1, 1, 0, 1, 1},
                                                 {1, 1, 1, 1, 1}}));
}

TEST(BoundaryGroundTruth, IgnoredPixelsAreExcluded) {
  LabelMap l(3, 3, 1);
  l.at(1, 1) = kIgnoreLabel;
  const auto b = boundary_ground_truth(l);
  EXPECT_EQ(b.at(1, 1), kIgnoreLabel);
  EXPECT_EQ(b.at(0, 1), 1);
}

TEST(BoundaryGroundTruth, InvariantUnderRelabeling) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> pick(0, 3);
  LabelMap l(12, 9);
  for (auto& v : l.ids) v = std::uint8_t(pick(rng));
  const std::uint8_t perm[4] = {2, 0, 3, 1};
  LabelMap r = l;
  for (auto& v : r.ids) v = perm[v];
  EXPECT_EQ(boundary_ground_truth(l), boundary_ground_truth(r));
}

TEST(CropRectangle, ExpandsTwentyPercentPerSide) {
  const Box b = crop_rectangle(Box{40, 40, 60, 60}, 64, 64, 200, 200);
  EXPECT_DOUBLE_EQ(b.width(), 28);
  EXPECT_DOUBLE_EQ(b.height(), 28);
  EXPECT_DOUBLE_EQ(b.x0, 36);
  EXPECT_DOUBLE_EQ(b.y0, 36);
}

TEST(CropRectangle, GrowsToPatchAspect) {
  const Box b = crop_rectangle(Box{40, 40, 60, 60}, 32, 64, 200, 200);
  EXPECT_DOUBLE_EQ(b.height(), 28);
  EXPECT_DOUBLE_EQ(b.width(), 56);
}

TEST(CropRectangle, EdgeComponentStaysInBounds) {
  for (const Box fg : {Box{0, 0, 10, 10}, Box{90, 90, 100, 100}, Box{-5, 40, 8, 60},
                       Box{0, 0, 100, 100}}) {
    const Box b = crop_rectangle(fg, 32, 64, 100, 100);
    EXPECT_GE(b.x0, 0);
    EXPECT_GE(b.y0, 0);
    EXPECT_LE(b.x1, 100 + 1e-9);
    EXPECT_LE(b.y1, 100 + 1e-9);
    EXPECT_NEAR(b.height() / b.width(), 0.5, 1e-12);
  }
  EXPECT_THROW(crop_rectangle(Box{5, 5, 5, 9}, 64, 64, 100, 100), Error);
}

// Component sizes up to roughly the patch resolution.
TEST(CropComponent, RoundTripOverlapsOriginalMask) {
  const std::pair<ComponentKind, std::uint8_t> cases[] = {{ComponentKind::eye_left, kLeftEye},
                                                          {ComponentKind::nose, kNose},
                                                          {ComponentKind::mouth, kUpperLip}};
  for (const auto [kind, id] : cases)
    for (double scale : {6.0, 11.0, 16.0}) {
      const auto labels = ellipse_labels(160, 160, 70.3, 83.1, scale * 1.7, scale, id);
      const Image img(Shape{1, 3, 160, 160}, 0.5f);
      const auto crop = crop_component(img, &labels, kind, {});
      std::vector<ComponentPrediction> preds{{crop.patch_labels, crop.crop}};
      const auto back = compose_two_stage(LabelMap(160, 160, 0), preds, fine_vocabulary().size());
      std::size_t inter = 0, uni = 0;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool a = labels.ids[i] == id, b = back.ids[i] == id;
        inter += a && b;
        uni += a || b;
      }
      EXPECT_GE(double(inter) / double(uni), 0.95) << to_string(kind) << " scale " << scale;
    }
}

TEST(CropComponent, EmptyRegionIsAnError) {
  const Image img(Shape{1, 3, 32, 32}, 0.f);
  const LabelMap labels(32, 32, kSkin);
  EXPECT_THROW(crop_component(img, &labels, ComponentKind::nose, {}), Error);
}

TEST(CropComponent, PatchExtents) {
  const auto labels = ellipse_labels(100, 100, 50, 50, 10, 6, kInnerMouth);
  const Image img(Shape{1, 3, 100, 100}, 0.f);
  const auto crop = crop_component(img, &labels, ComponentKind::mouth, {});
  EXPECT_EQ(crop.patch.shape(), (Shape{1, 3, 32, 64}));
  EXPECT_EQ(crop.patch_labels.height, 32u);
  EXPECT_EQ(crop.patch_labels.width, 64u);
}

TEST(Compose, NoPredictionsRelabelsCoarse) {
  const auto coarse = from_rows({{0, 1, 2}, {2, 1, 0}});
  EXPECT_EQ(compose_two_stage(coarse, {}, 3), from_rows({{0, 1, 10}, {10, 1, 0}}));
}

TEST(Compose, AllOtherPredictionLeavesMapUnchanged) {
  const auto coarse = LabelMap(64, 64, 1);
  ComponentCrop c{ComponentKind::nose, Box{10, 10, 40, 40}, 64, 64};
  std::vector<ComponentPrediction> preds{{LabelMap(64, 64, 0), c}};
  EXPECT_EQ(compose_two_stage(coarse, preds, 3), coarse_to_fine(coarse));
}

TEST(Compose, LaterComponentsOverwriteEarlier) {
  const LabelMap coarse(40, 40, 1);
  ComponentCrop eye{ComponentKind::eye_left, Box{0, 0, 40, 40}, 64, 64};
  ComponentCrop mouth{ComponentKind::mouth, Box{0, 0, 40, 20}, 32, 64};
  // Mouth given first; the fixed order still paints it last.
  std::vector<ComponentPrediction> preds{{LabelMap(32, 64, 3), mouth}, {LabelMap(64, 64, 2), eye}};
  const auto out = compose_two_stage(coarse, preds, 3);
  EXPECT_EQ(out.at(5, 5), kLowerLip);
  EXPECT_EQ(out.at(30, 5), kLeftEye);
}

TEST(Compose, IsIdempotent) {
  const LabelMap coarse(40, 40, 1);
  ComponentCrop c{ComponentKind::eye_right, Box{3.5, 7.25, 30.5, 34.25}, 64, 64};
  LabelMap pred(64, 64, 0);
  for (std::size_t y = 10; y < 40; ++y)
    for (std::size_t x = 20; x < 50; ++x) pred.at(y, x) = y < 20 ? 1 : 2;
  std::vector<ComponentPrediction> preds{{pred, c}};
  const auto once = compose_two_stage(coarse, preds, 3);
  EXPECT_EQ(compose_two_stage(once, preds, 11), once);
}

TEST(Compose, RejectsVocabularyAndExtentMismatch) {
  const LabelMap coarse(40, 40, 1);
  EXPECT_THROW(compose_two_stage(coarse, {}, 5), Error);
  ComponentCrop c{ComponentKind::nose, Box{0, 0, 20, 20}, 64, 64};
  std::vector<ComponentPrediction> bad_id{{LabelMap(64, 64, 4), c}};
  EXPECT_THROW(compose_two_stage(coarse, bad_id, 3), Error);
  std::vector<ComponentPrediction> bad_size{{LabelMap(32, 64, 1), c}};
  EXPECT_THROW(compose_two_stage(coarse, bad_size, 3), Error);
}

// Generator ground truth as the oracle: cropping each component from the true
// labels and composing those perfect predictions over the coarse map restores
// the component pixels.
TEST(Compose, PerfectComponentsRestoreSyntheticGroundTruth) {
  SynthConfig cfg;
  cfg.fine = true;
  cfg.count = 20;
  for (std::size_t size : {64, 128}) {
    cfg.height = cfg.width = size;
    std::size_t total = 0, correct = 0;
    for (const auto& rec : generate_synthetic(cfg)) {
      LabelMap coarse = rec.labels;
      for (auto& id : coarse.ids)
        if (is_component_class(id)) id = kSkin;
      std::vector<ComponentPrediction> preds;
      for (const auto kind : kComponentOrder) {
        const auto crop = crop_component(rec.image, &rec.labels, kind, rec.points);
        preds.push_back({crop.patch_labels, crop.crop});
      }
      const auto out = compose_two_stage(coarse, preds, fine_vocabulary().size());
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (!is_component_class(rec.labels.ids[i])) continue;
        ++total;
        correct += out.ids[i] == rec.labels.ids[i];
      }
    }
    EXPECT_GE(double(correct) / double(total), 0.99) << size;
  }
}

TEST(ComponentBox, KeypointBoxesCoverTheComponents) {
  SynthConfig cfg;
  cfg.fine = true;
  cfg.count = 50;
  cfg.height = cfg.width = 128;
  std::size_t total = 0, inside = 0;
  for (const auto& rec : generate_synthetic(cfg))
    for (const auto kind : kComponentOrder) {
      const Box b = crop_rectangle(component_box_from_points(rec.points, kind),
                                   component_patch(component_net(kind)).first,
                                   component_patch(component_net(kind)).second, 128, 128);
      const auto comp = fine_to_component(rec.labels, kind);
      for (std::size_t y = 0; y < 128; ++y)
        for (std::size_t x = 0; x < 128; ++x) {
          if (comp.at(y, x) == 0 || comp.at(y, x) == kIgnoreLabel) continue;
          ++total;
          inside += x + 0.5 >= b.x0 && x + 0.5 < b.x1 && y + 0.5 >= b.y0 && y + 0.5 < b.y1;
        }
    }
  EXPECT_GE(double(inside) / double(total), 0.99);
}

TEST(Vocabulary, ComponentMapsAreConsistent) {
  EXPECT_EQ(component_vocabulary("eye").size(), 3u);
  EXPECT_EQ(component_vocabulary("nose").size(), 2u);
  EXPECT_EQ(component_vocabulary("mouth").size(), 4u);
  EXPECT_EQ(component_to_fine(ComponentKind::eye_left),
            (std::vector<std::uint8_t>{0, kLeftBrow, kLeftEye}));
  EXPECT_EQ(component_to_fine(ComponentKind::eye_right),
            (std::vector<std::uint8_t>{0, kRightBrow, kRightEye}));
  EXPECT_EQ(component_to_fine(ComponentKind::mouth),
            (std::vector<std::uint8_t>{0, kUpperLip, kInnerMouth, kLowerLip}));
  EXPECT_THROW(component_vocabulary("ear"), Error);
}
