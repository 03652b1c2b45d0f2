#include "svrnn/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <random>

namespace svrnn {

LabelMap run_two_stage(const TwoStageModels& models, const Image& image,
                       std::span<const Point> points, int workers) {
  const auto stage1 = models.stage1.network();
  const LabelMap base = predict_image(stage1, image, workers);
  std::vector<ComponentPrediction> preds;
  if (points.size() == 5) {
    for (const auto kind : kComponentOrder) {
      const auto it = models.components.find(std::string(component_net(kind)));
      if (it == models.components.end()) continue;
      const auto crop = crop_component(image, nullptr, kind, points);
      const auto net = it->second.network();
      preds.push_back({predict(net, crop.patch, workers).labels, crop.crop});
    }
  }
  return compose_two_stage(base, preds, models.stage1.spec.num_classes());
}

const std::vector<std::vector<std::size_t>>& component_groups() {
  static const std::vector<std::vector<std::size_t>> groups = {
      {kLeftEye, kRightEye}, {kLeftBrow, kRightBrow}, {kNose},
      {kInnerMouth},         {kUpperLip},             {kLowerLip}};
  return groups;
}

double component_f_measure(const EvalReport& r) {
  require(r.classes.size() == fine_vocabulary().size(), ErrorKind::value,
          "component F-measure needs a fine-vocabulary report");
  return r.mean_f(component_groups());
}

EvalReport evaluate_two_stage(const TwoStageModels& models, std::span<const SampleRecord> records,
                              int workers) {
  EvalReport report(fine_vocabulary());
  std::vector<double> ms;
  for (const auto& rec : records) {
    const auto t0 = std::chrono::steady_clock::now();
    const LabelMap pred = run_two_stage(models, rec.image, rec.points, workers);
    ms.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    report.accumulate(pred, rec.labels);
  }
  report.finalize();
  report.timing = TimingStats::from(std::move(ms));
  return report;
}

// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

Tensor<float> random_input(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(0.f, 1.f);
  Tensor<float> t(s);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace

BenchReport bench_network(const Network<float>& net, std::size_t iterations, int threads,
                          std::uint64_t seed) {
  require(iterations >= 10, ErrorKind::config, "bench needs at least 10 iterations");
  const auto& spec = net.spec();
  const auto x = random_input(Shape{1, spec.in_channels, spec.in_height, spec.in_width}, seed);
  BenchReport r;
  r.size = spec.in_height;
  r.threads = threads;
  const std::size_t warmup = 2;

  for (std::size_t i = 0; i < warmup; ++i) net.forward(x, nullptr, nullptr, 1);
  std::vector<double> single, multi;
  for (std::size_t i = 0; i < iterations; ++i) {
    const auto t0 = Clock::now();
    net.forward(x, nullptr, nullptr, 1);
    single.push_back(ms_since(t0));
  }
  for (std::size_t i = 0; i < warmup; ++i) net.forward(x, nullptr, nullptr, threads);
  for (std::size_t i = 0; i < iterations; ++i) {
    const auto t0 = Clock::now();
    net.forward(x, nullptr, nullptr, threads);
    multi.push_back(ms_since(t0));
  }
  LayerTiming timing;
  double total = 0;
  for (std::size_t i = 0; i < iterations; ++i) {
    const auto t0 = Clock::now();
    net.forward(x, nullptr, &timing, 1);
    total += ms_since(t0);
  }
  r.single = TimingStats::from(single);
  r.multi = TimingStats::from(multi);
  r.layers = timing.names;
  for (double s : timing.seconds) {
    r.layer_ms.push_back(s * 1000 / double(iterations));
    r.layer_sum_ms += r.layer_ms.back();
  }
  r.end_to_end_ms = total / double(iterations);
  return r;
}

std::pair<TimingStats, TimingStats> bench_scan(std::size_t size, std::size_t channels,
                                               std::size_t iterations, int threads,
                                               std::uint64_t seed) {
  const Shape s{1, channels, size, size};
  auto x = random_input(s, seed);
  auto g = random_input(s, seed + 1);
  for (auto& v : g.values()) v = 4 * v - 2;
  SrnnParams<float> params;
  std::mt19937_64 rng(seed + 2);
  std::uniform_real_distribution<float> dist(-0.3f, 0.3f);
  for (std::size_t i = 0; i < 4; ++i) {
    params[i].omega = Matrix<float>(channels, channels);
    for (auto& v : params[i].omega.values()) v = dist(rng);
    params[i].omega = spectral_norm_project(params[i].omega, 1.f);
    params[i].bias.assign(channels, 0.05f);
    params[i].direction = kDirections[i];
  }
  auto run = [&](int workers) {
    srnn_forward<float>(x, &g, params, nullptr, workers);
    std::vector<double> ms;
    for (std::size_t i = 0; i < iterations; ++i) {
      const auto t0 = Clock::now();
      srnn_forward<float>(x, &g, params, nullptr, workers);
      ms.push_back(ms_since(t0));
    }
    return TimingStats::from(std::move(ms));
  };
  const auto one = run(1);
  const auto many = run(threads);
  return {one, many};
}

std::string BenchReport::to_text() const {
  std::string out;
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "input %zux%zu\n1 thread:  mean %.3f ms  median %.3f ms  p95 %.3f ms\n", size, size,
                single.mean_ms, single.median_ms, single.p95_ms);
  out += buf;
  std::snprintf(buf, sizeof buf, "%d threads: mean %.3f ms  median %.3f ms  p95 %.3f ms\n", threads,
                multi.mean_ms, multi.median_ms, multi.p95_ms);
  out += buf;
  out += "per layer (1 thread, mean ms):\n";
  for (std::size_t i = 0; i < layers.size(); ++i) {
    std::snprintf(buf, sizeof buf, "  %-12s %8.3f\n", layers[i].c_str(), layer_ms[i]);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "  layer sum %.3f ms vs end-to-end %.3f ms\n", layer_sum_ms,
                end_to_end_ms);
  out += buf;
  if (scan_single.samples) {
    std::snprintf(buf, sizeof buf,
                  "scan: 1 thread %.3f ms, %d threads %.3f ms, speedup %.2fx\n",
                  scan_single.median_ms, threads, scan_multi.median_ms,
                  scan_single.median_ms / scan_multi.median_ms);
    out += buf;
  }
  return out;
}

}  // namespace svrnn
