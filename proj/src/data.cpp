#include "svrnn/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>

#include "face_layout.hpp"
#include "svrnn/parsing.hpp"

namespace svrnn {

void SynthConfig::validate() const {
  require(count > 0, ErrorKind::config, "synth.count must be positive");
  require(height >= 16 && width >= 16, ErrorKind::config, "synth extents must be at least 16");
  require(clutter >= 0 && clutter <= 1, ErrorKind::config, "synth.clutter must lie in [0, 1]");
  if (multi_face)
    require(min_faces >= 1 && min_faces <= max_faces, ErrorKind::config,
            "synth face count range is empty");
}

namespace {

using Rgb = std::array<double, 3>;

std::mt19937_64 sample_rng(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(index),
                    std::uint32_t(std::uint64_t(index) >> 32)};
  return std::mt19937_64(seq);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Rgb jitter(std::mt19937_64& rng, Rgb base, double amount) {
  for (auto& c : base) c = std::clamp(c + uniform(rng, -amount, amount), 0.0, 1.0);
  return base;
}

Rgb scale(Rgb c, double s) {
  for (auto& v : c) v *= s;
  return c;
}

Rgb skin_tone(std::mt19937_64& rng) {
  const double t = uniform(rng, 0, 1);
  const Rgb light{0.93, 0.76, 0.64}, dark{0.55, 0.38, 0.27};
  Rgb c;
  for (int i = 0; i < 3; ++i) c[i] = light[i] * (1 - t) + dark[i] * t;
  return jitter(rng, c, 0.04);
}

Rgb hair_tone(std::mt19937_64& rng) {
  const double t = uniform(rng, 0, 1);
  const Rgb black{0.08, 0.06, 0.05}, brown{0.45, 0.3, 0.16};
  Rgb c;
  for (int i = 0; i < 3; ++i) c[i] = black[i] * (1 - t) + brown[i] * t;
  return jitter(rng, c, 0.03);
}

struct Face {
  double cx = 0, cy = 0, ax = 1, tilt = 0;
  double eye_dx, eye_dy, eye_rx, eye_ry;
  double brow_dy, brow_rx, brow_ry;
  double nose_dy, nose_rx, nose_ry;
  double mouth_dy, mouth_rx, mouth_ry, inner_ry;
  double hair_shift, hair_rx, hair_ry, hair_floor;
  Rgb skin, hair, brow, sclera, iris, upper_lip, lower_lip, inner;

  Face(std::mt19937_64& rng, double cx_, double cy_, double ax_) : cx(cx_), cy(cy_), ax(ax_) {
    using namespace layout;
    auto j = [&](double v, double rel) { return v * uniform(rng, 1 - rel, 1 + rel); };
    tilt = uniform(rng, -10, 10) * std::numbers::pi / 180;
    eye_dx = j(kEyeDx, 0.05);
    eye_dy = kEyeDy + uniform(rng, -0.03, 0.03);
    eye_rx = j(kEyeRx, 0.1);
    eye_ry = j(kEyeRy, 0.1);
    brow_dy = kBrowDy + uniform(rng, -0.03, 0.03);
    brow_rx = j(kBrowRx, 0.1);
    brow_ry = j(kBrowRy, 0.1);
    nose_dy = kNoseDy + uniform(rng, -0.03, 0.03);
    nose_rx = j(kNoseRx, 0.1);
    nose_ry = j(kNoseRy, 0.1);
    mouth_dy = kMouthDy + uniform(rng, -0.03, 0.03);
    mouth_rx = j(kMouthRx, 0.1);
    mouth_ry = j(kMouthRy, 0.1);
    inner_ry = mouth_ry * uniform(rng, 0.15, 0.4);
    hair_shift = uniform(rng, 0.2, 0.35);
    hair_rx = uniform(rng, 1.1, 1.25);
    hair_ry = kFaceAspect * uniform(rng, 0.95, 1.1);
    hair_floor = uniform(rng, 0.0, 0.5);
    skin = skin_tone(rng);
    hair = hair_tone(rng);
    brow = jitter(rng, scale(hair, 0.9), 0.03);
    sclera = jitter(rng, {0.92, 0.92, 0.9}, 0.04);
    iris = jitter(rng, {0.2, 0.15, 0.1}, 0.08);
    upper_lip = jitter(rng, {0.72, 0.32, 0.33}, 0.06);
    lower_lip = jitter(rng, scale(upper_lip, 1.1), 0.03);
    inner = jitter(rng, {0.3, 0.08, 0.1}, 0.05);
  }

  // Image coordinates -> face-local units.
  std::pair<double, double> local(double px, double py) const {
    const double dx = px - cx, dy = py - cy;
    const double cs = std::cos(tilt), sn = std::sin(tilt);
    return {(dx * cs + dy * sn) / ax, (-dx * sn + dy * cs) / ax};
  }

  Point image_point(double u, double v) const {
    const double cs = std::cos(tilt), sn = std::sin(tilt);
    return {cx + ax * (u * cs - v * sn), cy + ax * (u * sn + v * cs)};
  }

  /// Bounding radius including hair.
  double radius() const { return ax * (hair_ry + hair_shift + 0.1); }

  /// Fine class and colour at a pixel, or nullopt outside the face and hair.
  std::optional<std::pair<std::uint8_t, Rgb>> shade(double px, double py) const {
    const auto [u, v] = local(px, py);
    auto inside = [](double du, double dv, double rx, double ry) {
      return (du / rx) * (du / rx) + (dv / ry) * (dv / ry) <= 1.0;
    };
    const double aspect = layout::kFaceAspect;
    if (inside(u, v, 1.0, aspect)) {
      for (int s : {-1, 1}) {
        const double du = u - s * eye_dx;
        if (inside(du, v - eye_dy, eye_rx, eye_ry)) {
          const bool pupil = inside(du, v - eye_dy, eye_ry, eye_ry);
          return std::pair{std::uint8_t(s < 0 ? kLeftEye : kRightEye), pupil ? iris : sclera};
        }
        if (inside(du, v - brow_dy, brow_rx, brow_ry))
          return std::pair{std::uint8_t(s < 0 ? kLeftBrow : kRightBrow), brow};
      }
      if (inside(u, v - nose_dy, nose_rx, nose_ry)) {
        const bool nostril = v > nose_dy + 0.55 * nose_ry;
        return std::pair{std::uint8_t(kNose), scale(skin, nostril ? 0.62 : 0.86)};
      }
      if (inside(u, v - mouth_dy, mouth_rx, mouth_ry)) {
        if (inside(u, v - mouth_dy, mouth_rx * 0.75, inner_ry))
          return std::pair{std::uint8_t(kInnerMouth), inner};
        return v < mouth_dy ? std::pair{std::uint8_t(kUpperLip), upper_lip}
                            : std::pair{std::uint8_t(kLowerLip), lower_lip};
      }
      return std::pair{std::uint8_t(kSkin), scale(skin, 1.0 - 0.08 * v / aspect)};
    }
    if (v < hair_floor && inside(u, v + hair_shift, hair_rx, hair_ry))
      return std::pair{std::uint8_t(kHair), hair};
    return std::nullopt;
  }

  std::vector<Point> keypoints() const {
    const double corner = layout::kCornerInset * mouth_rx;
    return {image_point(-eye_dx, eye_dy), image_point(eye_dx, eye_dy), image_point(0, nose_dy),
            image_point(-corner, mouth_dy), image_point(corner, mouth_dy)};
  }
};

struct Blob {
  double cx, cy, rx, ry, angle;
  Rgb color;
  bool contains(double px, double py) const {
    const double dx = px - cx, dy = py - cy;
    const double cs = std::cos(angle), sn = std::sin(angle);
    const double u = (dx * cs + dy * sn) / rx, v = (-dx * sn + dy * cs) / ry;
    return u * u + v * v <= 1;
  }
};

std::uint8_t to_coarse(std::uint8_t fine) {
  if (fine == kBackground) return 0;
  if (fine == kHair) return 2;
  return 1;
}

}  // namespace

SampleRecord generate_sample(const SynthConfig& cfg, std::size_t index) {
  cfg.validate();
  auto rng = sample_rng(cfg.seed, index);
  const std::size_t H = cfg.height, W = cfg.width;
  const double S = double(std::min(H, W));
  const double clutter = cfg.clutter;

  std::vector<Face> faces;
  double content_w = double(W), content_h = double(H);
  if (cfg.multi_face) {
    // Content occupies the top-left part of the canvas; the rest is zero padding.
    content_w = double(W) * uniform(rng, 0.85, 1.0);
    content_h = double(H) * uniform(rng, 0.85, 1.0);
    const std::size_t target =
        std::uniform_int_distribution<std::size_t>(cfg.min_faces, cfg.max_faces)(rng);
    std::size_t attempts = 0;
    while (faces.size() < target) {
      require(++attempts <= 500, ErrorKind::value,
              "synthetic placement infeasible: could not place " + std::to_string(target) +
                  " faces");
      const double ax = S * uniform(rng, 0.055, 0.1);
      Face f(rng, 0, 0, ax);
      const double r = f.radius();
      if (content_w <= 2 * r || content_h <= 2 * r) continue;
      f.cx = uniform(rng, r, content_w - r);
      f.cy = uniform(rng, r, content_h - r);
      bool clear = true;
      for (const auto& g : faces)
        clear = clear && std::hypot(f.cx - g.cx, f.cy - g.cy) > r + g.radius();
      if (clear) faces.push_back(f);
    }
  } else {
    const double ax = S * uniform(rng, 0.19, 0.24);
    faces.emplace_back(rng, W * (0.5 + uniform(rng, -0.08, 0.08)),
                       H * (0.5 + uniform(rng, 0.0, 0.08)), ax);
  }

  // Background: base colour, low-frequency texture, and clutter blobs that
  // borrow skin and hair colours.
  const Rgb base = jitter(rng, {0.5, 0.5, 0.5}, 0.4);
  struct Wave {
    double fx, fy, phase, amp;
    int channel;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 4; ++i)
    waves.push_back({uniform(rng, 0.5, 6) / S, uniform(rng, 0.5, 6) / S, uniform(rng, 0, 6.3),
                     uniform(rng, 0.02, 0.07), int(rng() % 3)});
  std::vector<Blob> blobs;
  const int nblobs = int(std::lround(clutter * 10 * (cfg.multi_face ? 3 : 1)));
  for (int i = 0; i < nblobs; ++i) {
    Blob b;
    b.cx = uniform(rng, 0, content_w);
    b.cy = uniform(rng, 0, content_h);
    b.rx = S * uniform(rng, 0.04, 0.16) * (cfg.multi_face ? 0.4 : 1.0);
    b.ry = b.rx * uniform(rng, 0.4, 1.0);
    b.angle = uniform(rng, 0, std::numbers::pi);
    const double kind = uniform(rng, 0, 1);
    b.color = kind < 0.45 ? skin_tone(rng) : kind < 0.9 ? hair_tone(rng) : jitter(rng, base, 0.3);
    blobs.push_back(b);
  }
  // Occluders: bars drawn over the background and hair, never over the face.
  std::vector<Blob> occluders;
  const int nocc = int(std::lround(clutter * 3));
  for (int i = 0; i < nocc; ++i) {
    Blob b;
    b.cx = uniform(rng, 0, content_w);
    b.cy = uniform(rng, 0, content_h);
    b.rx = S * uniform(rng, 0.08, 0.2);
    b.ry = S * uniform(rng, 0.01, 0.025);
    b.angle = uniform(rng, 0, std::numbers::pi);
    b.color = jitter(rng, {0.5, 0.5, 0.5}, 0.45);
    occluders.push_back(b);
  }
  const double illum_angle = uniform(rng, 0, 2 * std::numbers::pi);
  const double illum = clutter * 0.3;
  const double noise_sigma = 0.015 + 0.035 * clutter;
  std::normal_distribution<double> noise(0, noise_sigma);

  SampleRecord rec;
  rec.image = Image(Shape{1, 3, H, W});
  rec.labels = LabelMap(H, W, 0);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      Rgb color{0, 0, 0};
      std::uint8_t fine = kBackground;
      const bool padded = px >= content_w || py >= content_h;
      if (!padded) {
        color = base;
        for (const auto& w : waves)
          color[w.channel] += w.amp * std::sin(2 * std::numbers::pi * (w.fx * px + w.fy * py) + w.phase);
        for (const auto& b : blobs)
          if (b.contains(px, py)) color = b.color;
        for (const auto& f : faces)
          if (auto s = f.shade(px, py)) {
            fine = s->first;
            color = s->second;
          }
        bool occluded = false;
        for (const auto& b : occluders) occluded = occluded || b.contains(px, py);
        if (occluded && fine != kBackground) {
          // Only occlude hair; reject face pixels so components stay intact.
          occluded = fine == kHair;
        }
        if (occluded) {
          for (const auto& b : occluders)
            if (b.contains(px, py)) color = b.color;
          fine = kBackground;
        }
        const double g = ((px / W - 0.5) * std::cos(illum_angle) +
                          (py / H - 0.5) * std::sin(illum_angle)) * 2;
        for (auto& c : color) c = c * (1 + illum * g) + noise(rng);
      }
      for (std::size_t c = 0; c < 3; ++c)
        rec.image.at(0, c, y, x) = float(std::clamp(color[c], 0.0, 1.0));
      rec.labels.at(y, x) = cfg.fine ? fine : to_coarse(fine);
    }
  }
  if (faces.size() == 1) rec.points = faces.front().keypoints();
  return rec;
}

std::vector<SampleRecord> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<SampleRecord> out;
  out.reserve(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) out.push_back(generate_sample(cfg, i));
  return out;
}

// ---------------------------------------------------------------------------

AugmentParams draw_augment(std::mt19937_64& rng, const AugmentConfig& cfg) {
  AugmentParams p;
  p.rotation_deg = uniform(rng, -cfg.max_rotation_deg, cfg.max_rotation_deg);
  p.scale = uniform(rng, cfg.min_scale, cfg.max_scale);
  p.tx = uniform(rng, -cfg.max_translate, cfg.max_translate);
  p.ty = uniform(rng, -cfg.max_translate, cfg.max_translate);
  p.mirror = uniform(rng, 0, 1) < cfg.mirror_probability;
  return p;
}

SampleRecord apply_augment(const SampleRecord& rec, const AugmentParams& p, bool fine) {
  const Shape s = rec.image.shape();
  const double W = double(s.w), H = double(s.h);
  // Forward map source -> destination, then resample through its inverse.
  Affine fwd = Affine::translation(-W / 2, -H / 2);
  if (p.mirror) fwd = Affine::scaling(-1, 1).compose(fwd);
  fwd = Affine::scaling(p.scale, p.scale).compose(fwd);
  fwd = Affine::rotation(p.rotation_deg * std::numbers::pi / 180).compose(fwd);
  fwd = Affine::translation(W / 2 + p.tx * W, H / 2 + p.ty * H).compose(fwd);
  const Affine inv = fwd.inverse();

  SampleRecord out;
  out.image = warp_image(rec.image, s.h, s.w, inv);
  out.labels = warp_labels(rec.labels, s.h, s.w, inv, kIgnoreLabel);
  if (p.mirror && fine) {
    for (auto& id : out.labels.ids) {
      switch (id) {
        case kLeftBrow: id = kRightBrow; break;
        case kRightBrow: id = kLeftBrow; break;
        case kLeftEye: id = kRightEye; break;
        case kRightEye: id = kLeftEye; break;
        default: break;
      }
    }
  }
  for (const auto& q : rec.points) out.points.push_back(fwd.apply(q));
  if (p.mirror && out.points.size() == 5) {
    std::swap(out.points[0], out.points[1]);
    std::swap(out.points[3], out.points[4]);
  }
  return out;
}

SampleRecord augment(const SampleRecord& rec, std::mt19937_64& rng, bool fine,
                     const AugmentConfig& cfg) {
  return apply_augment(rec, draw_augment(rng, cfg), fine);
}

// ---------------------------------------------------------------------------

namespace {

LossMask keep_and_sample(const LabelMap& m, const std::vector<std::uint32_t>& keep,
                         const std::vector<std::uint32_t>& pool, double ratio,
                         std::mt19937_64& rng) {
  LossMask mask(1, m.height, m.width, 0);
  if (keep.empty()) return mask;
  for (auto i : keep) mask.include[i] = 1;
  const std::size_t want =
      std::min(pool.size(), std::size_t(std::llround(ratio * double(keep.size()))));
  std::vector<std::uint32_t> picked;
  picked.reserve(want);
  std::sample(pool.begin(), pool.end(), std::back_inserter(picked), want, rng);
  for (auto i : picked) mask.include[i] = 1;
  return mask;
}

}  // namespace

LossMask boundary_sampling_mask(const LabelMap& gate_gt, double ratio, std::mt19937_64& rng) {
  std::vector<std::uint32_t> pos, neg;
  for (std::uint32_t i = 0; i < gate_gt.size(); ++i) {
    if (gate_gt.ids[i] == 0) pos.push_back(i);
    else if (gate_gt.ids[i] == 1) neg.push_back(i);
  }
  return keep_and_sample(gate_gt, pos, neg, ratio, rng);
}

LossMask background_sampling_mask(const LabelMap& labels, double factor, std::mt19937_64& rng) {
  std::vector<std::uint32_t> fg, bg;
  for (std::uint32_t i = 0; i < labels.size(); ++i) {
    const std::uint8_t id = labels.ids[i];
    if (id == kIgnoreLabel) continue;
    (id == 0 ? bg : fg).push_back(i);
  }
  return keep_and_sample(labels, fg, bg, factor, rng);
}

LossMask stack_masks(std::span<const LossMask> masks) {
  require(!masks.empty(), ErrorKind::shape, "stack_masks: no masks");
  LossMask out(0, masks[0].height, masks[0].width);
  out.include.clear();
  for (const auto& m : masks) {
    require(m.height == out.height && m.width == out.width, ErrorKind::shape,
            "stack_masks: extents differ");
    out.include.insert(out.include.end(), m.include.begin(), m.include.end());
    out.n += m.n;
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string record_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return buf;
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, std::span<const SampleRecord> records) {
  namespace fs = std::filesystem;
  std::error_code ec;
  for (const char* sub : {"images", "labels", "points"}) {
    fs::create_directories(dir / sub, ec);
    require(!ec, ErrorKind::io, "cannot create " + (dir / sub).string() + ": " + ec.message());
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const std::string id = record_id(i);
    write_png_rgb(dir / "images" / (id + ".png"), r.image);
    write_png_labels(dir / "labels" / (id + ".png"), r.labels);
    if (!r.points.empty()) {
      std::ofstream out(dir / "points" / (id + ".txt"));
      require(bool(out), ErrorKind::io, "cannot write points for " + id);
      out.precision(17);
      for (const auto& p : r.points) out << p.x << " " << p.y << "\n";
    }
  }
}

std::vector<SampleRecord> load_dataset(const std::filesystem::path& dir, std::size_t num_classes) {
  namespace fs = std::filesystem;
  require(fs::is_directory(dir / "images") && fs::is_directory(dir / "labels"), ErrorKind::io,
          dir.string() + " lacks images/ and labels/ directories");
  std::vector<fs::path> images;
  for (const auto& e : fs::directory_iterator(dir / "images"))
    if (e.path().extension() == ".png") images.push_back(e.path());
  std::sort(images.begin(), images.end());
  require(!images.empty(), ErrorKind::io, "no images in " + (dir / "images").string());

  std::vector<SampleRecord> out;
  for (const auto& path : images) {
    const std::string id = path.stem().string();
    const fs::path label_path = dir / "labels" / (id + ".png");
    require(fs::exists(label_path), ErrorKind::io, "record " + id + ": missing label file");
    SampleRecord r;
    r.image = read_png_rgb(path);
    r.labels = read_png_labels(label_path);
    require(r.labels.height == r.image.shape().h && r.labels.width == r.image.shape().w,
            ErrorKind::shape, "record " + id + ": image and label extents differ");
    for (auto v : r.labels.ids)
      require(v < num_classes || v == kIgnoreLabel, ErrorKind::value,
              "record " + id + ": label id " + std::to_string(v) + " outside the " +
                  std::to_string(num_classes) + "-class vocabulary");
    const fs::path points_path = dir / "points" / (id + ".txt");
    if (fs::exists(points_path)) {
      std::ifstream in(points_path);
      Point p;
      while (in >> p.x >> p.y) r.points.push_back(p);
      require(r.points.size() == 5, ErrorKind::format,
              "record " + id + ": expected 5 keypoints, found " + std::to_string(r.points.size()));
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace svrnn
