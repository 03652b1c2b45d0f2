#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "svrnn/label_map.hpp"
#include "svrnn/tensor.hpp"

namespace svrnn {

/// RGB image, 1 x 3 x H x W, values in [0, 1].
using Image = Tensor<float>;

struct Point {
  double x = 0;
  double y = 0;
  bool operator==(const Point&) const = default;
};

/// Maps destination coordinates to source coordinates:
///   src = (a*x + b*y + c, d*x + e*y + f)
/// Coordinates are continuous with pixel (i, j) covering [j, j+1) x [i, i+1).
struct Affine {
  double a = 1, b = 0, c = 0;
  double d = 0, e = 1, f = 0;

  Point apply(Point p) const { return {a * p.x + b * p.y + c, d * p.x + e * p.y + f}; }
  Affine inverse() const;
  /// (this o other)(p) = this(other(p)).
  Affine compose(const Affine& other) const;

  static Affine translation(double tx, double ty) { return {1, 0, tx, 0, 1, ty}; }
  static Affine scaling(double sx, double sy) { return {sx, 0, 0, 0, sy, 0}; }
  static Affine rotation(double radians);
};

/// Bilinear resampling of `img` at src = map(dst pixel centre); outside samples take `fill`.
Image warp_image(const Image& img, std::size_t out_h, std::size_t out_w, const Affine& map,
                 float fill = 0.f);

/// Nearest-neighbour resampling; outside samples take `fill`.
LabelMap warp_labels(const LabelMap& labels, std::size_t out_h, std::size_t out_w,
                     const Affine& map, std::uint8_t fill = kIgnoreLabel);

Image resize_image(const Image& img, std::size_t out_h, std::size_t out_w);
LabelMap resize_labels(const LabelMap& labels, std::size_t out_h, std::size_t out_w);

using Palette = std::vector<std::array<std::uint8_t, 3>>;

/// Fixed colours for class ids 0..10 (the fine vocabulary; coarse ids reuse 0..2).
const Palette& label_palette();

Image read_png_rgb(const std::filesystem::path& path);
void write_png_rgb(const std::filesystem::path& path, const Image& img);
/// 8-bit palette or grayscale PNG; pixel value is the class id.
LabelMap read_png_labels(const std::filesystem::path& path);
void write_png_labels(const std::filesystem::path& path, const LabelMap& labels);
void write_png_gray(const std::filesystem::path& path, std::size_t h, std::size_t w,
                    const std::vector<std::uint8_t>& pixels);

}  // namespace svrnn
