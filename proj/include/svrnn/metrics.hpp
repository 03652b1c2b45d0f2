#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "svrnn/label_map.hpp"

namespace svrnn {

struct TimingStats {
  std::size_t samples = 0;
  double mean_ms = 0;
  double median_ms = 0;
  double p95_ms = 0;

  static TimingStats from(std::vector<double> ms);
};

/// Per-class precision/recall/F-measure and per-pixel accuracy from a
/// confusion matrix (rows: ground truth, columns: prediction).
struct EvalReport {
  std::vector<std::string> classes;
  std::vector<std::vector<std::uint64_t>> confusion;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f_measure;
  double accuracy = 0;
  TimingStats timing;

  explicit EvalReport(std::vector<std::string> class_names = {});
  static EvalReport from_confusion(std::vector<std::string> classes,
                                   std::vector<std::vector<std::uint64_t>> confusion);

  /// Adds one prediction; ground-truth ignore pixels are skipped.
  void accumulate(const LabelMap& prediction, const LabelMap& truth);
  /// Recomputes precision, recall, F and accuracy from the confusion matrix.
  void finalize();

  /// Mean F over the named classes (each entry may merge several class ids).
  double mean_f(const std::vector<std::vector<std::size_t>>& groups) const;
  /// F of a union of class ids treated as one class.
  double merged_f(const std::vector<std::size_t>& ids) const;

  std::string to_json() const;
  std::string to_text() const;
};

}  // namespace svrnn
