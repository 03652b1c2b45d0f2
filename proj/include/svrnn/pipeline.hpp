#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "svrnn/metrics.hpp"
#include "svrnn/model_io.hpp"
#include "svrnn/parsing.hpp"
#include "svrnn/training.hpp"

namespace svrnn {

/// Stage-1 model plus one component network per name ("eye", "nose", "mouth").
struct TwoStageModels {
  Model stage1;
  std::map<std::string, Model> components;
};

/// Stage-1 labels mapped back to the image, composed with component
/// predictions on keypoint-derived crops. Output uses the fine vocabulary.
LabelMap run_two_stage(const TwoStageModels& models, const Image& image,
                       std::span<const Point> points, int workers = 1);

/// Class-id groups scored as facial components: eyes, brows, nose, inner
/// mouth, upper lip, lower lip (left and right merged).
const std::vector<std::vector<std::size_t>>& component_groups();

/// Mean component F-measure of a fine-vocabulary report.
double component_f_measure(const EvalReport& fine_report);

/// Scores two-stage parsing against fine labels.
EvalReport evaluate_two_stage(const TwoStageModels& models, std::span<const SampleRecord> records,
                              int workers = 1);

struct BenchReport {
  std::size_t size = 0;
  int threads = 1;
  TimingStats single;
  TimingStats multi;
  std::vector<std::string> layers;
  std::vector<double> layer_ms;  // mean per image, single thread
  double layer_sum_ms = 0;
  double end_to_end_ms = 0;  // mean single-thread forward with per-layer timing enabled
  TimingStats scan_single;   // four-direction scan alone
  TimingStats scan_multi;

  std::string to_text() const;
};

/// Times inference of `net` at its input extents. Warm-up runs are excluded.
BenchReport bench_network(const Network<float>& net, std::size_t iterations, int threads,
                          std::uint64_t seed = 1);

/// Times the four-direction gated scan on 1 x channels x size x size, with one
/// worker and with `threads` workers.
std::pair<TimingStats, TimingStats> bench_scan(std::size_t size, std::size_t channels,
                                               std::size_t iterations, int threads,
                                               std::uint64_t seed = 1);

}  // namespace svrnn
