#include "svrnn/image.hpp"

#include <png.h>

#include <csetjmp>
#include <cmath>
#include <cstdio>
#include <memory>

namespace svrnn {

Affine Affine::inverse() const {
  const double det = a * e - b * d;
  require(std::abs(det) > 1e-12, ErrorKind::value, "affine map is singular");
  Affine r;
  r.a = e / det;
  r.b = -b / det;
  r.d = -d / det;
  r.e = a / det;
  r.c = -(r.a * c + r.b * f);
  r.f = -(r.d * c + r.e * f);
  return r;
}

Affine Affine::compose(const Affine& o) const {
  return {a * o.a + b * o.d, a * o.b + b * o.e, a * o.c + b * o.f + c,
          d * o.a + e * o.d, d * o.b + e * o.e, d * o.c + e * o.f + f};
}

Affine Affine::rotation(double r) {
  const double cs = std::cos(r), sn = std::sin(r);
  return {cs, -sn, 0, sn, cs, 0};
}

Image warp_image(const Image& img, std::size_t out_h, std::size_t out_w, const Affine& map,
                 float fill) {
  const Shape s = img.shape();
  Image out(Shape{1, s.c, out_h, out_w});
  for (std::size_t y = 0; y < out_h; ++y) {
    for (std::size_t x = 0; x < out_w; ++x) {
      const Point p = map.apply({x + 0.5, y + 0.5});
      const double sx = p.x - 0.5, sy = p.y - 0.5;
      if (sx < -0.5 || sy < -0.5 || sx > double(s.w) - 0.5 || sy > double(s.h) - 0.5) {
        for (std::size_t c = 0; c < s.c; ++c) out.at(0, c, y, x) = fill;
        continue;
      }
      const double fx = std::floor(sx), fy = std::floor(sy);
      const double tx = sx - fx, ty = sy - fy;
      auto clampi = [](double v, std::size_t n) {
        return std::size_t(std::clamp<long>(long(v), 0, long(n) - 1));
      };
      const std::size_t x0 = clampi(fx, s.w), x1 = clampi(fx + 1, s.w);
      const std::size_t y0 = clampi(fy, s.h), y1 = clampi(fy + 1, s.h);
      for (std::size_t c = 0; c < s.c; ++c) {
        const double top = (1 - tx) * img.at(0, c, y0, x0) + tx * img.at(0, c, y0, x1);
        const double bot = (1 - tx) * img.at(0, c, y1, x0) + tx * img.at(0, c, y1, x1);
        out.at(0, c, y, x) = float((1 - ty) * top + ty * bot);
      }
    }
  }
  return out;
}

LabelMap warp_labels(const LabelMap& labels, std::size_t out_h, std::size_t out_w,
                     const Affine& map, std::uint8_t fill) {
  LabelMap out(out_h, out_w, fill);
  for (std::size_t y = 0; y < out_h; ++y) {
    for (std::size_t x = 0; x < out_w; ++x) {
      const Point p = map.apply({x + 0.5, y + 0.5});
      const double fx = std::floor(p.x), fy = std::floor(p.y);
      if (fx < 0 || fy < 0 || fx >= double(labels.width) || fy >= double(labels.height)) continue;
      out.at(y, x) = labels.at(std::size_t(fy), std::size_t(fx));
    }
  }
  return out;
}

Image resize_image(const Image& img, std::size_t out_h, std::size_t out_w) {
  const Shape s = img.shape();
  if (s.h == out_h && s.w == out_w) return img;
  // Area-average when shrinking by an integer factor; bilinear otherwise.
  if (s.h % out_h == 0 && s.w % out_w == 0 && s.h / out_h == s.w / out_w && s.h > out_h) {
    const std::size_t f = s.h / out_h;
    Image out(Shape{1, s.c, out_h, out_w});
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t x = 0; x < out_w; ++x) {
          double acc = 0;
          for (std::size_t i = 0; i < f; ++i)
            for (std::size_t j = 0; j < f; ++j) acc += img.at(0, c, y * f + i, x * f + j);
          out.at(0, c, y, x) = float(acc / double(f * f));
        }
    return out;
  }
  return warp_image(img, out_h, out_w,
                    Affine::scaling(double(s.w) / double(out_w), double(s.h) / double(out_h)));
}

LabelMap resize_labels(const LabelMap& labels, std::size_t out_h, std::size_t out_w) {
  if (labels.height == out_h && labels.width == out_w) return labels;
  return warp_labels(labels, out_h, out_w,
                     Affine::scaling(double(labels.width) / double(out_w),
                                     double(labels.height) / double(out_h)));
}

const Palette& label_palette() {
  static const Palette palette = {
      {0, 0, 0},       {255, 200, 160}, {120, 60, 20},  {160, 90, 40},
      {0, 90, 255},    {0, 190, 255},   {255, 120, 0},  {200, 0, 60},
      {90, 0, 90},     {255, 60, 130},  {110, 255, 60},
  };
  return palette;
}

// ---------------------------------------------------------------------------

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const std::filesystem::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  require(f != nullptr, ErrorKind::io, "cannot open " + path.string());
  return f;
}

// libpng reports errors by longjmp; the message is parked here first.
void png_error_fn(png_structp png, png_const_charp msg) {
  *static_cast<std::string*>(png_get_error_ptr(png)) = msg;
  png_longjmp(png, 1);
}
void png_warning_fn(png_structp, png_const_charp) {}

struct Decoded {
  std::size_t h = 0, w = 0;
  int color_type = 0;
  std::vector<std::uint8_t> pixels;  // rows of w * channels bytes
  std::size_t channels = 0;
};

Decoded decode(const std::filesystem::path& path, bool expand_palette) {
  File f = open_file(path, "rb");
  png_byte sig[8];
  require(std::fread(sig, 1, 8, f.get()) == 8 && png_sig_cmp(sig, 0, 8) == 0, ErrorKind::format,
          path.string() + " is not a PNG file");
  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_error_fn,
                                           png_warning_fn);
  png_infop info = png_create_info_struct(png);
  Decoded d;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::format, path.string() + ": png: " + message);
  }
  {
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    d.w = png_get_image_width(png, info);
    d.h = png_get_image_height(png, info);
    d.color_type = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (d.color_type == PNG_COLOR_TYPE_PALETTE) {
      if (expand_palette) png_set_palette_to_rgb(png);
      else if (depth < 8) png_set_packing(png);
    }
    if (d.color_type == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (expand_palette && (d.color_type & PNG_COLOR_MASK_ALPHA)) png_set_strip_alpha(png);
    if (expand_palette && png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    d.channels = png_get_channels(png, info);
    const std::size_t row = png_get_rowbytes(png, info);
    d.pixels.resize(row * d.h);
    rows.resize(d.h);
    for (std::size_t y = 0; y < d.h; ++y) rows[y] = d.pixels.data() + y * row;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return d;
}

void encode(const std::filesystem::path& path, std::size_t h, std::size_t w, int color_type,
            const std::vector<std::uint8_t>& pixels, std::size_t channels,
            const Palette* palette) {
  File f = open_file(path, "wb");
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, png_error_fn,
                                            png_warning_fn);
  png_infop info = png_create_info_struct(png);
  std::vector<png_color> colors;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::format, path.string() + ": png: " + message);
  }
  {
    png_init_io(png, f.get());
    png_set_IHDR(png, info, png_uint_32(w), png_uint_32(h), 8, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    if (palette) {
      colors.resize(256, png_color{255, 255, 255});
      for (std::size_t i = 0; i < palette->size(); ++i)
        colors[i] = png_color{(*palette)[i][0], (*palette)[i][1], (*palette)[i][2]};
      png_set_PLTE(png, info, colors.data(), int(colors.size()));
    }
    png_write_info(png, info);
    for (std::size_t y = 0; y < h; ++y)
      png_write_row(png, const_cast<png_bytep>(pixels.data() + y * w * channels));
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image read_png_rgb(const std::filesystem::path& path) {
  const Decoded d = decode(path, true);
  Image img(Shape{1, 3, d.h, d.w});
  for (std::size_t y = 0; y < d.h; ++y)
    for (std::size_t x = 0; x < d.w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t src = d.channels >= 3 ? c : 0;
        img.at(0, c, y, x) = d.pixels[(y * d.w + x) * d.channels + src] / 255.f;
      }
  return img;
}

void write_png_rgb(const std::filesystem::path& path, const Image& img) {
  const Shape s = img.shape();
  require(s.n == 1 && s.c == 3, ErrorKind::shape, "write_png_rgb expects 1x3xHxW, got " + s.str());
  std::vector<std::uint8_t> px(s.h * s.w * 3);
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        px[(y * s.w + x) * 3 + c] =
            std::uint8_t(std::lround(std::clamp(img.at(0, c, y, x), 0.f, 1.f) * 255.f));
  encode(path, s.h, s.w, PNG_COLOR_TYPE_RGB, px, 3, nullptr);
}

LabelMap read_png_labels(const std::filesystem::path& path) {
  const Decoded d = decode(path, false);
  require(d.color_type == PNG_COLOR_TYPE_PALETTE || d.color_type == PNG_COLOR_TYPE_GRAY,
          ErrorKind::format, path.string() + ": label PNG must be palette or grayscale");
  LabelMap out(d.h, d.w);
  for (std::size_t i = 0; i < d.h * d.w; ++i) out.ids[i] = d.pixels[i * d.channels];
  return out;
}

void write_png_labels(const std::filesystem::path& path, const LabelMap& labels) {
  encode(path, labels.height, labels.width, PNG_COLOR_TYPE_PALETTE, labels.ids, 1,
         &label_palette());
}

void write_png_gray(const std::filesystem::path& path, std::size_t h, std::size_t w,
                    const std::vector<std::uint8_t>& pixels) {
  require(pixels.size() == h * w, ErrorKind::shape, "gray image size mismatch");
  encode(path, h, w, PNG_COLOR_TYPE_GRAY, pixels, 1, nullptr);
}

}  // namespace svrnn
