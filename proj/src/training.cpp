#include "svrnn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "svrnn/parsing.hpp"

namespace svrnn {

std::vector<SampleRecord> training_records(const RunConfig& cfg) {
  if (!cfg.train_dir.empty())
    return load_dataset(cfg.train_dir, cfg.synth.fine ? fine_vocabulary().size()
                                                      : coarse_vocabulary().size());
  return generate_synthetic(cfg.synth);
}

std::vector<SampleRecord> test_records(const RunConfig& cfg) {
  if (!cfg.test_dir.empty())
    return load_dataset(cfg.test_dir, cfg.synth.fine ? fine_vocabulary().size()
                                                     : coarse_vocabulary().size());
  if (!cfg.train_dir.empty() || cfg.synth_test_count == 0) return {};
  return generate_synthetic(cfg.synth_test());
}

LabelMap fine_to_coarse(const LabelMap& fine) {
  LabelMap out = fine;
  for (auto& id : out.ids) {
    if (id == kIgnoreLabel || id == kBackground) continue;
    id = id == kHair ? 2 : 1;
  }
  return out;
}

std::size_t examples_per_record(const RunConfig& cfg) { return cfg.stage == "2-eye" ? 2 : 1; }

namespace {

ComponentKind stage_component(const RunConfig& cfg, std::size_t item) {
  if (cfg.stage == "2-eye") return item % 2 == 0 ? ComponentKind::eye_left : ComponentKind::eye_right;
  if (cfg.stage == "2-nose") return ComponentKind::nose;
  return ComponentKind::mouth;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace

std::optional<Example> make_example(const RunConfig& cfg, const SampleRecord& rec,
                                    std::size_t item, std::mt19937_64* rng) {
  const bool data_fine = cfg.synth.fine;
  SampleRecord r = rng && cfg.augment ? augment(rec, *rng, data_fine, cfg.augmentation) : rec;
  if (cfg.stage == "1") {
    Example ex;
    ex.image = fit_to_input(r.image, cfg.input_size, cfg.input_size);
    Affine back;
    fit_to_input(r.image, cfg.input_size, cfg.input_size, &back);
    ex.labels = warp_labels(r.labels, cfg.input_size, cfg.input_size, back);
    if (data_fine && !cfg.fine()) ex.labels = fine_to_coarse(ex.labels);
    return ex;
  }
  const ComponentKind kind = stage_component(cfg, item);
  std::optional<Box> fg = component_box_from_labels(r.labels, kind);
  if (!rng && r.points.size() == 5) fg = component_box_from_points(r.points, kind);
  if (!fg) return std::nullopt;
  if (rng && cfg.crop_jitter > 0) {
    const double j = cfg.crop_jitter;
    const double w = fg->width(), h = fg->height();
    const double cx = (fg->x0 + fg->x1) / 2 + uniform(*rng, -j, j) * w;
    const double cy = (fg->y0 + fg->y1) / 2 + uniform(*rng, -j, j) * h;
    const double s = uniform(*rng, 1 - j, 1 + j);
    fg = Box{cx - s * w / 2, cy - s * h / 2, cx + s * w / 2, cy + s * h / 2};
  }
  auto crop = crop_component_box(r.image, &r.labels, kind, *fg);
  return Example{std::move(crop.patch), std::move(crop.patch_labels)};
}

// ---------------------------------------------------------------------------

Image fit_to_input(const Image& img, std::size_t h, std::size_t w, Affine* back) {
  const Shape s = img.shape();
  const double scale = std::min(double(h) / double(s.h), double(w) / double(s.w));
  const std::size_t rh = std::max<std::size_t>(1, std::size_t(std::lround(double(s.h) * scale)));
  const std::size_t rw = std::max<std::size_t>(1, std::size_t(std::lround(double(s.w) * scale)));
  const Affine map = Affine::scaling(double(s.w) / double(rw), double(s.h) / double(rh));
  if (back) *back = map;
  if (rh == h && rw == w) return resize_image(img, h, w);
  const Image resized = resize_image(img, rh, rw);
  Image out(Shape{1, s.c, h, w});
  for (std::size_t c = 0; c < s.c; ++c)
    for (std::size_t y = 0; y < rh; ++y)
      for (std::size_t x = 0; x < rw; ++x) out.at(0, c, y, x) = resized.at(0, c, y, x);
  return out;
}

template <typename T>
LabelMap argmax_labels(const Tensor<T>& logits) {
  const Shape s = logits.shape();
  LabelMap out(s.h, s.w);
  for (std::size_t i = 0; i < s.plane(); ++i) {
    std::size_t best = 0;
    T best_v = logits.plane(0, 0)[i];
    for (std::size_t c = 1; c < s.c; ++c) {
      const T v = logits.plane(0, c)[i];
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    out.ids[i] = std::uint8_t(best);
  }
  return out;
}

template <typename T>
Prediction<T> predict(const Network<T>& net, const Image& input, int workers) {
  const Tensor<T> x = input.template cast<T>();
  auto values = net.forward(x, nullptr, nullptr, workers);
  const auto& spec = net.spec();
  Prediction<T> p;
  p.final_logits = std::move(values.at(spec.heads.final));
  p.labels = argmax_labels(p.final_logits);
  if (!spec.heads.gate.empty()) p.gate = logistic(values.at(spec.heads.gate));
  return p;
}

template <typename T>
LabelMap predict_image(const Network<T>& net, const Image& img, int workers) {
  const auto& spec = net.spec();
  Affine back;
  const Image input = fit_to_input(img, spec.in_height, spec.in_width, &back);
  const LabelMap small = predict(net, input, workers).labels;
  const Shape s = img.shape();
  return warp_labels(small, s.h, s.w, back.inverse(), 0);
}

template <typename T>
EvalReport evaluate(const Network<T>& net, const RunConfig& cfg,
                    std::span<const SampleRecord> records) {
  EvalReport report(net.spec().vocabulary);
  std::vector<double> ms;
  const std::size_t per = examples_per_record(cfg);
  for (const auto& rec : records) {
    for (std::size_t item = 0; item < per; ++item) {
      LabelMap pred, truth;
      const auto t0 = std::chrono::steady_clock::now();
      if (cfg.stage == "1") {
        pred = predict_image(net, rec.image, cfg.workers);
        truth = cfg.synth.fine && !cfg.fine() ? fine_to_coarse(rec.labels) : rec.labels;
      } else {
        auto ex = make_example(cfg, rec, item, nullptr);
        if (!ex) continue;
        pred = predict(net, ex->image, cfg.workers).labels;
        truth = std::move(ex->labels);
      }
      ms.push_back(
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
      if (cfg.eval_size) {
        pred = resize_labels(pred, cfg.eval_size, cfg.eval_size);
        truth = resize_labels(truth, cfg.eval_size, cfg.eval_size);
      }
      report.accumulate(pred, truth);
    }
  }
  report.finalize();
  report.timing = TimingStats::from(std::move(ms));
  return report;
}

// ---------------------------------------------------------------------------

template <typename T>
TrainResult<T> train_network(const RunConfig& cfg, std::span<const SampleRecord> train,
                             std::span<const SampleRecord> heldout, const EpochCallback& on_epoch) {
  cfg.validate();
  require(!train.empty(), ErrorKind::config, "training set is empty");
  const NetworkSpec spec = cfg.network();
  ParamStore<T> init(spec);
  init.initialize(cfg.seed);
  Network<T> net(spec, std::move(init));
  OptimState<T> opt;
  opt.momentum = T(cfg.momentum);
  opt.weight_decay = T(cfg.weight_decay);
  std::mt19937_64 rng(cfg.seed * 0x2545F4914F6CDD1Dull + 17);

  const std::size_t per = examples_per_record(cfg);
  std::vector<std::size_t> order(train.size() * per);
  std::iota(order.begin(), order.end(), 0);
  const Shape in{1, spec.in_channels, spec.in_height, spec.in_width};

  TrainResult<T> result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr =
        cfg.learning_rate * (cfg.lr_step ? std::pow(cfg.lr_decay, double(epoch / cfg.lr_step)) : 1.0);
    opt.learning_rate = T(lr);
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.epoch = epoch + 1;
    log.learning_rate = lr;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<Example> examples;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k) {
        auto ex = make_example(cfg, train[order[k] / per], order[k] % per, &rng);
        if (ex) examples.push_back(std::move(*ex));
      }
      if (examples.empty()) continue;
      Tensor<T> x(Shape{examples.size(), in.c, in.h, in.w});
      std::vector<LabelMap> labels;
      for (std::size_t n = 0; n < examples.size(); ++n) {
        const auto& src = examples[n].image;
        std::transform(src.values().begin(), src.values().end(), x.plane(n, 0),
                       [](float v) { return T(v); });
        labels.push_back(std::move(examples[n].labels));
      }
      LossTargets targets = make_targets(spec, labels);
      if (!spec.heads.gate.empty() && cfg.boundary_ratio > 0) {
        std::vector<LossMask> masks;
        for (const auto& g : targets.gate_gt)
          masks.push_back(boundary_sampling_mask(g, cfg.boundary_ratio, rng));
        targets.gate_mask = stack_masks(masks);
      }
      if (cfg.background_factor > 0) {
        std::vector<LossMask> fm, cm;
        for (const auto& l : targets.labels)
          fm.push_back(background_sampling_mask(l, cfg.background_factor, rng));
        for (const auto& l : targets.coarse_labels)
          cm.push_back(background_sampling_mask(l, cfg.background_factor, rng));
        targets.label_mask = stack_masks(fm);
        if (!cm.empty()) targets.coarse_mask = stack_masks(cm);
        if (targets.label_mask->count() == 0 ||
            (targets.coarse_mask && targets.coarse_mask->count() == 0)) {
          std::fprintf(stderr, "warning: batch without foreground pixels skipped\n");
          continue;
        }
      }
      ForwardTape<T> tape;
      const auto outputs = net.forward(x, &tape, nullptr, cfg.workers);
      auto loss = total_loss(spec, outputs, targets, cfg.loss);
      require(std::isfinite(double(loss.total)), ErrorKind::numeric,
              "training diverged: non-finite loss in epoch " + std::to_string(epoch + 1));
      const auto grads = net.backward(tape, loss.grads, nullptr, cfg.workers);
      sgd_step(net.params().params(), std::span<const Tensor<T>>(grads), opt);
      log.loss += double(loss.total);
      log.loss_coarse += double(loss.coarse);
      log.loss_gate += double(loss.gate);
      log.loss_final += double(loss.final);
      ++batches;
    }
    if (batches) {
      log.loss /= double(batches);
      log.loss_coarse /= double(batches);
      log.loss_gate /= double(batches);
      log.loss_final /= double(batches);
    }
    if (!heldout.empty()) log.heldout_accuracy = evaluate(net, cfg, heldout).accuracy;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  result.params = net.params();
  return result;
}

Model train_model(const RunConfig& cfg, std::span<const SampleRecord> train,
                  std::span<const SampleRecord> heldout, const EpochCallback& on_epoch) {
  Model m;
  m.config = cfg;
  m.spec = cfg.network();
  if (cfg.precision == Precision::f64)
    m.params = train_network<double>(cfg, train, heldout, on_epoch).params.cast<float>();
  else
    m.params = train_network<float>(cfg, train, heldout, on_epoch).params;
  // Re-validate against the spec (sets the spectral flags on the cast copy).
  m.params = Network<float>(m.spec, m.params).params();
  return m;
}

#define SVRNN_INSTANTIATE(T)                                                                    \
  template TrainResult<T> train_network<T>(const RunConfig&, std::span<const SampleRecord>,      \
                                           std::span<const SampleRecord>, const EpochCallback&); \
  template Prediction<T> predict<T>(const Network<T>&, const Image&, int);                       \
  template LabelMap argmax_labels<T>(const Tensor<T>&);                                          \
  template LabelMap predict_image<T>(const Network<T>&, const Image&, int);                      \
  template EvalReport evaluate<T>(const Network<T>&, const RunConfig&,                           \
                                  std::span<const SampleRecord>);

SVRNN_INSTANTIATE(float)
SVRNN_INSTANTIATE(double)

}  // namespace svrnn
