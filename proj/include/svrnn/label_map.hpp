#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace svrnn {

inline constexpr std::uint8_t kIgnoreLabel = 255;

/// H x W class assignments. kIgnoreLabel marks pixels excluded from supervision.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> ids;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::uint8_t fill = 0)
      : height(h), width(w), ids(h * w, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return ids[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return ids[y * width + x]; }
  std::size_t size() const { return ids.size(); }
  bool operator==(const LabelMap&) const = default;
};

/// Per-pixel binary inclusion weights for a batch, N x 1 x H x W.
struct LossMask {
  std::size_t n = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> include;

  LossMask() = default;
  LossMask(std::size_t batch, std::size_t h, std::size_t w, std::uint8_t fill = 1)
      : n(batch), height(h), width(w), include(batch * h * w, fill) {}

  std::size_t count() const {
    std::size_t total = 0;
    for (auto v : include) total += v != 0;
    return total;
  }
  bool operator==(const LossMask&) const = default;
};

}  // namespace svrnn
