#include "svrnn/parsing.hpp"

#include <algorithm>
#include <cmath>

#include "face_layout.hpp"

namespace svrnn {

const std::vector<std::string>& coarse_vocabulary() {
  static const std::vector<std::string> v = {"background", "skin", "hair"};
  return v;
}

const std::vector<std::string>& fine_vocabulary() {
  static const std::vector<std::string> v = {
      "background", "skin",      "left_brow",   "right_brow", "left_eye", "right_eye",
      "nose",       "upper_lip", "inner_mouth", "lower_lip",  "hair"};
  return v;
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::cnn_s: return "CNN-S";
    case Variant::cnn_deep: return "CNN-Deep";
    case Variant::rnn: return "RNN";
    case Variant::rnn_g: return "RNN-G";
  }
  return "?";
}

Variant parse_variant(std::string_view s) {
  for (auto v : {Variant::cnn_s, Variant::cnn_deep, Variant::rnn, Variant::rnn_g})
    if (to_string(v) == s) return v;
  fail(ErrorKind::config, "unknown model variant '" + std::string(s) +
                              "' (expected CNN-S, CNN-Deep, RNN or RNN-G)");
}

namespace {

LayerSpec conv(std::string out, std::string in, std::size_t channels, std::size_t k,
               bool relu = true) {
  LayerSpec l;
  l.kind = LayerKind::conv;
  l.outputs = {std::move(out)};
  l.inputs = {std::move(in)};
  l.out_channels = channels;
  l.kernel = k;
  l.pad = k / 2;
  l.relu = relu;
  return l;
}

LayerSpec deconv(std::string out, std::string in, std::size_t channels, bool relu) {
  LayerSpec l;
  l.kind = LayerKind::deconv;
  l.outputs = {std::move(out)};
  l.inputs = {std::move(in)};
  l.out_channels = channels;
  l.kernel = 4;
  l.stride = 2;
  l.pad = 1;
  l.relu = relu;
  return l;
}

LayerSpec pool(std::string out, std::string in) {
  LayerSpec l;
  l.kind = LayerKind::pool;
  l.outputs = {std::move(out)};
  l.inputs = {std::move(in)};
  l.stride = 2;
  return l;
}

LayerSpec simple(LayerKind kind, std::vector<std::string> outs, std::vector<std::string> ins) {
  LayerSpec l;
  l.kind = kind;
  l.outputs = std::move(outs);
  l.inputs = std::move(ins);
  return l;
}

}  // namespace

NetworkSpec build_stage1(const std::vector<std::string>& vocabulary, std::size_t input_size,
                         Variant variant) {
  const bool multi_face = input_size == 512;
  require(input_size >= 8 && input_size % 4 == 0, ErrorKind::config,
          "stage-1 input size must be a multiple of 4, got " + std::to_string(input_size));
  require(vocabulary.size() >= 2, ErrorKind::config, "stage-1 needs at least two classes");
  const std::size_t classes = vocabulary.size();

  NetworkSpec s;
  s.stage = "1";
  s.variant = std::string(to_string(variant));
  s.vocabulary = vocabulary;
  s.in_height = s.in_width = input_size;
  auto& L = s.layers;
  L.push_back(conv("conv1", "image", 16, 5));
  L.push_back(pool("pool2", "conv1"));
  L.push_back(conv("conv3", "pool2", 32, 3));
  L.push_back(pool("pool4", "conv3"));
  L.push_back(conv("conv5", "pool4", 32, 3));
  std::string trunk = "conv5";
  if (multi_face) {
    L.push_back(conv("conv5a", "conv5", 16, 3));
    L.push_back(pool("pool5a", "conv5a"));
    L.push_back(conv("conv5b", "pool5a", 16, 3));
    L.push_back(pool("pool5b", "conv5b"));
    L.push_back(deconv("deconv5c", "pool5b", 32, true));
    trunk = "deconv5c";
  }
  const std::size_t up = multi_face ? 4 : 2;

  const bool narrow = variant == Variant::cnn_s;
  L.push_back(deconv("deconv6", trunk, narrow ? 8 : 16, false));
  std::string features;
  switch (variant) {
    case Variant::cnn_s:
      L.push_back(conv("coarse", "deconv6", classes, 3, false));
      features = "deconv6";
      break;
    case Variant::cnn_deep:
      L.push_back(conv("coarse", "deconv6", classes, 3, false));
      L.push_back(conv("deep1", "deconv6", 32, 3));
      L.push_back(conv("deep2", "deep1", 32, 3));
      features = "deep2";
      break;
    case Variant::rnn:
    case Variant::rnn_g: {
      L.push_back(simple(LayerKind::split, {"label", "gate_feat"}, {"deconv6"}));
      L.push_back(conv("coarse", "label", classes, 3, false));
      auto gate = conv("gate", "gate_feat", 1, 1, false);
      gate.gate_head_bias = true;
      L.push_back(gate);
      const bool gated = variant == Variant::rnn_g;
      auto rnn = simple(LayerKind::srnn, {"rnn"},
                        gated ? std::vector<std::string>{"label", "gate_feat"}
                              : std::vector<std::string>{"label"});
      rnn.gated = gated;
      L.push_back(rnn);
      features = "rnn";
      s.heads.gate = "gate";
      break;
    }
  }
  L.push_back(conv("final_low", features, classes, 1, false));
  auto upsample = simple(LayerKind::upsample, {"final"}, {"final_low"});
  upsample.factor = up;
  L.push_back(upsample);
  s.heads.coarse = "coarse";
  s.heads.final = "final";
  s.infer_shapes(1);
  return s;
}

NetworkSpec build_stage1(std::size_t num_classes, std::size_t input_size, Variant variant) {
  std::vector<std::string> vocab;
  if (num_classes == coarse_vocabulary().size()) vocab = coarse_vocabulary();
  else if (num_classes == fine_vocabulary().size()) vocab = fine_vocabulary();
  else
    for (std::size_t i = 0; i < num_classes; ++i) vocab.push_back("class" + std::to_string(i));
  return build_stage1(vocab, input_size, variant);
}

std::string_view to_string(ComponentKind k) {
  switch (k) {
    case ComponentKind::eye_left: return "eye_left";
    case ComponentKind::eye_right: return "eye_right";
    case ComponentKind::nose: return "nose";
    case ComponentKind::mouth: return "mouth";
  }
  return "?";
}

std::string_view component_net(ComponentKind k) {
  switch (k) {
    case ComponentKind::eye_left:
    case ComponentKind::eye_right: return "eye";
    case ComponentKind::nose: return "nose";
    case ComponentKind::mouth: return "mouth";
  }
  return "?";
}

const std::vector<std::string>& component_vocabulary(std::string_view net) {
  static const std::vector<std::string> eye = {"other", "eyebrow", "eye"};
  static const std::vector<std::string> nose = {"other", "nose"};
  static const std::vector<std::string> mouth = {"other", "upper_lip", "inner_mouth", "lower_lip"};
  if (net == "eye") return eye;
  if (net == "nose") return nose;
  if (net == "mouth") return mouth;
  fail(ErrorKind::config, "unknown component network '" + std::string(net) + "'");
}

std::vector<std::uint8_t> component_to_fine(ComponentKind k) {
  switch (k) {
    case ComponentKind::eye_left: return {kBackground, kLeftBrow, kLeftEye};
    case ComponentKind::eye_right: return {kBackground, kRightBrow, kRightEye};
    case ComponentKind::nose: return {kBackground, kNose};
    case ComponentKind::mouth: return {kBackground, kUpperLip, kInnerMouth, kLowerLip};
  }
  return {};
}

std::pair<std::size_t, std::size_t> component_patch(std::string_view net) {
  component_vocabulary(net);
  return net == "mouth" ? std::pair<std::size_t, std::size_t>{32, 64}
                        : std::pair<std::size_t, std::size_t>{64, 64};
}

NetworkSpec build_stage2(std::string_view net) {
  const auto& vocab = component_vocabulary(net);
  const auto [h, w] = component_patch(net);
  NetworkSpec s;
  s.stage = "2-" + std::string(net);
  s.variant = "component";
  s.vocabulary = vocab;
  s.in_height = h;
  s.in_width = w;
  auto& L = s.layers;
  L.push_back(conv("conv1", "image", 16, 5));
  L.push_back(pool("pool1", "conv1"));
  L.push_back(conv("conv2", "pool1", 32, 3));
  L.push_back(pool("pool2", "conv2"));
  L.push_back(conv("conv3", "pool2", 32, 3));
  L.push_back(deconv("deconv1", "conv3", 32, true));
  L.push_back(conv("conv4", "deconv1", 16, 3));
  L.push_back(deconv("deconv2", "conv4", 16, true));
  L.push_back(conv("final", "deconv2", vocab.size(), 3, false));
  s.heads.final = "final";
  s.infer_shapes(1);
  return s;
}

LabelMap boundary_ground_truth(const LabelMap& labels) {
  const std::size_t H = labels.height, W = labels.width;
  LabelMap out(H, W, 1);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const std::uint8_t id = labels.at(y, x);
      if (id == kIgnoreLabel) {
        out.at(y, x) = kIgnoreLabel;
        continue;
      }
      auto differs = [&](std::size_t yy, std::size_t xx) {
        const std::uint8_t n = labels.at(yy, xx);
        return n != kIgnoreLabel && n != id;
      };
      if ((y > 0 && differs(y - 1, x)) || (y + 1 < H && differs(y + 1, x)) ||
          (x > 0 && differs(y, x - 1)) || (x + 1 < W && differs(y, x + 1)))
        out.at(y, x) = 0;
    }
  }
  return out;
}

LabelMap downsample_labels(const LabelMap& labels, std::size_t factor) {
  require(factor >= 1 && labels.height % factor == 0 && labels.width % factor == 0,
          ErrorKind::shape, "label map not divisible by " + std::to_string(factor));
  return resize_labels(labels, labels.height / factor, labels.width / factor);
}

LossTargets make_targets(const NetworkSpec& spec, std::span<const LabelMap> labels) {
  const auto shapes = spec.infer_shapes(1);
  LossTargets t;
  t.labels.assign(labels.begin(), labels.end());
  auto at_head = [&](const std::string& head) {
    std::vector<LabelMap> out;
    const Shape s = shapes.at(head);
    for (const auto& l : labels) {
      require(l.height % s.h == 0 && l.height / s.h == l.width / s.w, ErrorKind::shape,
              "labels do not divide onto head '" + head + "'");
      out.push_back(downsample_labels(l, l.height / s.h));
    }
    return out;
  };
  if (!spec.heads.coarse.empty()) t.coarse_labels = at_head(spec.heads.coarse);
  if (!spec.heads.gate.empty()) {
    for (const auto& l : at_head(spec.heads.gate)) t.gate_gt.push_back(boundary_ground_truth(l));
  }
  return t;
}

template <typename T>
TotalLoss<T> total_loss(const NetworkSpec& spec, const std::map<std::string, Tensor<T>>& outputs,
                        const LossTargets& targets, const LossWeights& weights) {
  TotalLoss<T> r;
  auto head = [&](const std::string& name) -> const Tensor<T>& {
    const auto it = outputs.find(name);
    require(it != outputs.end(), ErrorKind::value, "missing head output '" + name + "'");
    return it->second;
  };
  auto scaled = [](LossResult<T>&& lr, double w) {
    for (auto& g : lr.grad.values()) g = static_cast<T>(g * w);
    return std::move(lr.grad);
  };
  auto opt = [](const std::optional<LossMask>& m) { return m ? &*m : nullptr; };

  if (!spec.heads.coarse.empty()) {
    const auto& out = head(spec.heads.coarse);
    if (weights.coarse != 0) {
      auto lr = softmax_ce(out, std::span<const LabelMap>(targets.coarse_labels),
                           opt(targets.coarse_mask));
      r.coarse = lr.loss;
      r.grads[spec.heads.coarse] = scaled(std::move(lr), weights.coarse);
    }
  }
  if (!spec.heads.gate.empty()) {
    const auto& out = head(spec.heads.gate);
    if (targets.gate_mask && targets.gate_mask->count() == 0) {
      r.gate_skipped = true;
    } else if (weights.gate != 0) {
      auto lr = sigmoid_bce(out, std::span<const LabelMap>(targets.gate_gt), opt(targets.gate_mask));
      r.gate = lr.loss;
      r.grads[spec.heads.gate] = scaled(std::move(lr), weights.gate);
    }
  }
  const auto& fin = head(spec.heads.final);
  if (weights.final != 0) {
    auto lr = softmax_ce(fin, std::span<const LabelMap>(targets.labels), opt(targets.label_mask));
    r.final = lr.loss;
    r.grads[spec.heads.final] = scaled(std::move(lr), weights.final);
  }
  r.total = static_cast<T>(weights.coarse * r.coarse + weights.gate * r.gate +
                           weights.final * r.final);
  return r;
}

template TotalLoss<float> total_loss<float>(const NetworkSpec&,
                                            const std::map<std::string, Tensor<float>>&,
                                            const LossTargets&, const LossWeights&);
template TotalLoss<double> total_loss<double>(const NetworkSpec&,
                                              const std::map<std::string, Tensor<double>>&,
                                              const LossTargets&, const LossWeights&);

// ---------------------------------------------------------------------------

namespace {

bool belongs(std::uint8_t id, ComponentKind kind) {
  const auto ids = component_to_fine(kind);
  return id != kBackground && std::find(ids.begin(), ids.end(), id) != ids.end();
}

Box rotated_box(Point centre, double angle, double x0, double y0, double x1, double y1,
                double scale) {
  const double cs = std::cos(angle), sn = std::sin(angle);
  Box b{1e300, 1e300, -1e300, -1e300};
  for (double lx : {x0, x1})
    for (double ly : {y0, y1}) {
      const double px = centre.x + scale * (cs * lx - sn * ly);
      const double py = centre.y + scale * (sn * lx + cs * ly);
      b.x0 = std::min(b.x0, px);
      b.y0 = std::min(b.y0, py);
      b.x1 = std::max(b.x1, px);
      b.y1 = std::max(b.y1, py);
    }
  return b;
}

}  // namespace

Affine ComponentCrop::patch_to_source() const {
  return {source.width() / double(patch_w), 0, source.x0, 0, source.height() / double(patch_h),
          source.y0};
}

std::optional<Box> component_box_from_labels(const LabelMap& fine, ComponentKind kind) {
  std::size_t x0 = fine.width, y0 = fine.height, x1 = 0, y1 = 0;
  bool any = false;
  for (std::size_t y = 0; y < fine.height; ++y)
    for (std::size_t x = 0; x < fine.width; ++x) {
      if (!belongs(fine.at(y, x), kind)) continue;
      any = true;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x + 1);
      y1 = std::max(y1, y + 1);
    }
  if (!any) return std::nullopt;
  return Box{double(x0), double(y0), double(x1), double(y1)};
}

Box component_box_from_points(std::span<const Point> p, ComponentKind kind) {
  using namespace layout;
  require(p.size() == 5, ErrorKind::value, "expected 5 keypoints, got " + std::to_string(p.size()));
  const double dx = p[1].x - p[0].x, dy = p[1].y - p[0].y;
  const double half_width = std::hypot(dx, dy) / (2 * kEyeDx);
  require(half_width > 0, ErrorKind::value, "eye keypoints coincide");
  const double angle = std::atan2(dy, dx);
  switch (kind) {
    case ComponentKind::eye_left:
    case ComponentKind::eye_right: {
      const Point e = kind == ComponentKind::eye_left ? p[0] : p[1];
      const double rx = std::max(kEyeRx, kBrowRx);
      return rotated_box(e, angle, -rx, kBrowDy - kEyeDy - kBrowRy, rx, kEyeRy, half_width);
    }
    case ComponentKind::nose:
      return rotated_box(p[2], angle, -kNoseRx, -kNoseRy, kNoseRx, kNoseRy, half_width);
    case ComponentKind::mouth: {
      const Point c{(p[3].x + p[4].x) / 2, (p[3].y + p[4].y) / 2};
      return rotated_box(c, angle, -kMouthRx, -kMouthRy, kMouthRx, kMouthRy, half_width);
    }
  }
  return {};
}

Box crop_rectangle(const Box& fg, std::size_t patch_h, std::size_t patch_w, std::size_t image_h,
                   std::size_t image_w) {
  require(fg.width() > 0 && fg.height() > 0, ErrorKind::value, "empty component region");
  double w = fg.width() * 1.4, h = fg.height() * 1.4;
  const double cx = (fg.x0 + fg.x1) / 2, cy = (fg.y0 + fg.y1) / 2;
  const double aspect = double(patch_h) / double(patch_w);
  if (h / w < aspect) h = w * aspect;
  else w = h / aspect;
  const double shrink = std::min({1.0, double(image_w) / w, double(image_h) / h});
  w *= shrink;
  h *= shrink;
  const double x0 = std::clamp(cx - w / 2, 0.0, double(image_w) - w);
  const double y0 = std::clamp(cy - h / 2, 0.0, double(image_h) - h);
  return Box{x0, y0, x0 + w, y0 + h};
}

LabelMap fine_to_component(const LabelMap& fine, ComponentKind kind) {
  const auto ids = component_to_fine(kind);
  LabelMap out(fine.height, fine.width, 0);
  for (std::size_t i = 0; i < fine.size(); ++i) {
    const std::uint8_t id = fine.ids[i];
    if (id == kIgnoreLabel) {
      out.ids[i] = kIgnoreLabel;
      continue;
    }
    for (std::size_t c = 1; c < ids.size(); ++c)
      if (ids[c] == id) out.ids[i] = std::uint8_t(c);
  }
  return out;
}

CropResult crop_component_box(const Image& image, const LabelMap* fine_labels, ComponentKind kind,
                              const Box& foreground) {
  const Shape s = image.shape();
  const auto [ph, pw] = component_patch(component_net(kind));
  CropResult r;
  r.crop.kind = kind;
  r.crop.patch_h = ph;
  r.crop.patch_w = pw;
  r.crop.source = crop_rectangle(foreground, ph, pw, s.h, s.w);
  const Affine map = r.crop.patch_to_source();
  r.patch = warp_image(image, ph, pw, map);
  if (fine_labels) {
    require(fine_labels->height == s.h && fine_labels->width == s.w, ErrorKind::shape,
            "crop_component: image and label extents differ");
    r.patch_labels = warp_labels(fine_to_component(*fine_labels, kind), ph, pw, map);
  }
  return r;
}

CropResult crop_component(const Image& image, const LabelMap* fine_labels, ComponentKind kind,
                          std::span<const Point> points) {
  std::optional<Box> fg;
  if (fine_labels) fg = component_box_from_labels(*fine_labels, kind);
  if (!fg && points.size() == 5) fg = component_box_from_points(points, kind);
  require(fg.has_value(), ErrorKind::value,
          "crop_component: no region for " + std::string(to_string(kind)));
  return crop_component_box(image, fine_labels, kind, *fg);
}

LabelMap coarse_to_fine(const LabelMap& coarse) {
  static const std::uint8_t map[3] = {kBackground, kSkin, kHair};
  LabelMap out = coarse;
  for (auto& id : out.ids) {
    if (id == kIgnoreLabel) continue;
    require(id < 3, ErrorKind::value, "coarse label id " + std::to_string(id) + " out of range");
    id = map[id];
  }
  return out;
}

LabelMap compose_two_stage(const LabelMap& base, std::span<const ComponentPrediction> preds,
                           std::size_t base_classes) {
  require(base_classes == coarse_vocabulary().size() || base_classes == fine_vocabulary().size(),
          ErrorKind::value, "compose_two_stage: base vocabulary must be coarse or fine");
  LabelMap out = base_classes == coarse_vocabulary().size() ? coarse_to_fine(base) : base;
  for (const auto kind : kComponentOrder) {
    for (const auto& p : preds) {
      if (p.crop.kind != kind) continue;
      const auto ids = component_to_fine(kind);
      const auto& c = p.crop;
      require(p.labels.height == c.patch_h && p.labels.width == c.patch_w, ErrorKind::shape,
              "component prediction does not match its crop extents");
      require(c.source.x0 >= -1e-9 && c.source.y0 >= -1e-9 &&
                  c.source.x1 <= double(out.width) + 1e-9 &&
                  c.source.y1 <= double(out.height) + 1e-9,
              ErrorKind::shape, "component crop lies outside the coarse map");
      const Affine to_patch = c.patch_to_source().inverse();
      const std::size_t y_begin = std::size_t(std::floor(c.source.y0));
      const std::size_t y_end = std::min(out.height, std::size_t(std::ceil(c.source.y1)));
      const std::size_t x_begin = std::size_t(std::floor(c.source.x0));
      const std::size_t x_end = std::min(out.width, std::size_t(std::ceil(c.source.x1)));
      for (std::size_t y = y_begin; y < y_end; ++y)
        for (std::size_t x = x_begin; x < x_end; ++x) {
          const Point q = to_patch.apply({x + 0.5, y + 0.5});
          const double px = std::floor(q.x), py = std::floor(q.y);
          if (px < 0 || py < 0 || px >= double(c.patch_w) || py >= double(c.patch_h)) continue;
          const std::uint8_t id = p.labels.at(std::size_t(py), std::size_t(px));
          if (id == 0 || id == kIgnoreLabel) continue;
          require(id < ids.size(), ErrorKind::value, "component label outside its vocabulary");
          out.at(y, x) = ids[id];
        }
    }
  }
  return out;
}

}  // namespace svrnn
