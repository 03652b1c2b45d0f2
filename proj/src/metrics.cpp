#include "svrnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "svrnn/error.hpp"

namespace svrnn {

TimingStats TimingStats::from(std::vector<double> ms) {
  TimingStats t;
  t.samples = ms.size();
  if (ms.empty()) return t;
  std::sort(ms.begin(), ms.end());
  t.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / double(ms.size());
  const std::size_t n = ms.size();
  t.median_ms = n % 2 ? ms[n / 2] : 0.5 * (ms[n / 2 - 1] + ms[n / 2]);
  t.p95_ms = ms[std::min(n - 1, std::size_t(std::ceil(0.95 * double(n))) - 1)];
  return t;
}

EvalReport::EvalReport(std::vector<std::string> class_names) : classes(std::move(class_names)) {
  const std::size_t k = classes.size();
  confusion.assign(k, std::vector<std::uint64_t>(k, 0));
  precision.assign(k, 0);
  recall.assign(k, 0);
  f_measure.assign(k, 0);
}

EvalReport EvalReport::from_confusion(std::vector<std::string> classes,
                                      std::vector<std::vector<std::uint64_t>> confusion) {
  require(confusion.size() == classes.size(), ErrorKind::shape, "confusion matrix size mismatch");
  for (const auto& row : confusion)
    require(row.size() == classes.size(), ErrorKind::shape, "confusion matrix is not square");
  EvalReport r(std::move(classes));
  r.confusion = std::move(confusion);
  r.finalize();
  return r;
}

void EvalReport::accumulate(const LabelMap& prediction, const LabelMap& truth) {
  require(prediction.height == truth.height && prediction.width == truth.width, ErrorKind::shape,
          "prediction and ground truth extents differ");
  const std::size_t k = classes.size();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const std::uint8_t t = truth.ids[i];
    if (t == kIgnoreLabel) continue;
    const std::uint8_t p = prediction.ids[i];
    require(t < k && p < k, ErrorKind::value,
            "label id outside the " + std::to_string(k) + "-class vocabulary");
    ++confusion[t][p];
  }
}

void EvalReport::finalize() {
  const std::size_t k = classes.size();
  std::uint64_t total = 0, correct = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += confusion[c][j];
      col += confusion[j][c];
    }
    const double tp = double(confusion[c][c]);
    precision[c] = col ? tp / double(col) : 0.0;
    recall[c] = row ? tp / double(row) : 0.0;
    // 2PR/(P+R) written over the counts, rounded once.
    f_measure[c] = row + col ? 2 * tp / double(row + col) : 0.0;
    total += row;
    correct += confusion[c][c];
  }
  accuracy = total ? double(correct) / double(total) : 0.0;
}

double EvalReport::merged_f(const std::vector<std::size_t>& ids) const {
  auto in = [&](std::size_t c) { return std::find(ids.begin(), ids.end(), c) != ids.end(); };
  std::uint64_t tp = 0, row = 0, col = 0;
  for (std::size_t i = 0; i < classes.size(); ++i)
    for (std::size_t j = 0; j < classes.size(); ++j) {
      const auto v = confusion[i][j];
      if (in(i)) row += v;
      if (in(j)) col += v;
      if (in(i) && in(j)) tp += v;
    }
  return row + col ? 2 * double(tp) / double(row + col) : 0.0;
}

double EvalReport::mean_f(const std::vector<std::vector<std::size_t>>& groups) const {
  require(!groups.empty(), ErrorKind::value, "mean_f: no class groups");
  double sum = 0;
  for (const auto& g : groups) sum += merged_f(g);
  return sum / double(groups.size());
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["accuracy"] = accuracy;
  j["classes"] = nlohmann::json::array();
  for (std::size_t c = 0; c < classes.size(); ++c)
    j["classes"].push_back({{"name", classes[c]},
                            {"precision", precision[c]},
                            {"recall", recall[c]},
                            {"f_measure", f_measure[c]}});
  j["confusion"] = confusion;
  j["timing_ms"] = {{"samples", timing.samples},
                    {"mean", timing.mean_ms},
                    {"median", timing.median_ms},
                    {"p95", timing.p95_ms}};
  return j.dump(2);
}

std::string EvalReport::to_text() const {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "pixel accuracy %.4f\n", accuracy);
  out += buf;
  std::snprintf(buf, sizeof buf, "%-14s %9s %9s %9s\n", "class", "precision", "recall", "F");
  out += buf;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::snprintf(buf, sizeof buf, "%-14s %9.4f %9.4f %9.4f\n", classes[c].c_str(), precision[c],
                  recall[c], f_measure[c]);
    out += buf;
  }
  if (timing.samples) {
    std::snprintf(buf, sizeof buf, "latency ms: mean %.2f median %.2f p95 %.2f (%zu images)\n",
                  timing.mean_ms, timing.median_ms, timing.p95_ms, timing.samples);
    out += buf;
  }
  return out;
}

}  // namespace svrnn
