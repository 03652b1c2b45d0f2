#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "svrnn/config.hpp"
#include "svrnn/network.hpp"

namespace svrnn {

/// A trained network with the configuration that produced it.
struct Model {
  RunConfig config;
  NetworkSpec spec;
  ParamStore<float> params;

  Network<float> network() const { return Network<float>(spec, params); }
};

inline constexpr std::uint32_t kModelVersion = 1;

/// Layout (little-endian):
///   "SVRN" | u32 version | u32 header bytes | header text
///   | u32 record count | records | u32 CRC32 of everything before it
/// Header text is the run configuration, a "---" line, then the network spec.
/// Each record: u16 name length | name | 4 x u32 extents | float32 values.
std::vector<std::uint8_t> serialize_model(const Model& m);
Model deserialize_model(const std::vector<std::uint8_t>& bytes,
                        const std::optional<std::string>& expected_stage = std::nullopt);

void save_model(const std::filesystem::path& path, const Model& m);
Model load_model(const std::filesystem::path& path,
                 const std::optional<std::string>& expected_stage = std::nullopt);

}  // namespace svrnn
