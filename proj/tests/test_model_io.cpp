#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "svrnn/error.hpp"
#include "svrnn/model_io.hpp"

using namespace svrnn;

namespace {

Model make_model(const std::string& stage, std::uint64_t seed) {
  Model m;
  m.config.stage = stage;
  m.config.synth.fine = stage != "1";
  m.config.seed = seed;
  m.spec = m.config.network();
  m.params = ParamStore<float>(m.spec);
  m.params.initialize(seed);
  return m;
}

void expect_format_error(const std::vector<std::uint8_t>& bytes, const std::string& what,
                         const std::optional<std::string>& stage = std::nullopt) {
  try {
    deserialize_model(bytes, stage);
    FAIL() << "expected a format error containing '" << what << "'";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::format);
    EXPECT_NE(std::string(e.what()).find(what), std::string::npos) << e.what();
  }
}

}  // namespace

TEST(ModelIo, SerializeDeserializeSerializeIsByteExact) {
  for (const char* stage : {"1", "2-eye", "2-mouth"}) {
    const auto bytes = serialize_model(make_model(stage, 3));
    EXPECT_EQ(serialize_model(deserialize_model(bytes)), bytes) << stage;
  }
}

TEST(ModelIo, FileRoundTripPreservesEverything) {
  const auto path = std::filesystem::temp_directory_path() / "svrnn_test_model.svrn";
  const auto m = make_model("1", 5);
  save_model(path, m);
  const auto back = load_model(path, std::string("1"));
  EXPECT_EQ(back.spec, m.spec);
  EXPECT_EQ(back.config.to_text(), m.config.to_text());
  ASSERT_EQ(back.params.size(), m.params.size());
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    EXPECT_EQ(back.params[i].name, m.params[i].name);
    EXPECT_EQ(back.params[i].value, m.params[i].value);
  }
  // Bit-identical inference after reload.
  std::mt19937_64 rng(1);
  Tensor<float> x(Shape{1, 3, 64, 64});
  for (auto& v : x.values()) v = std::uniform_real_distribution<float>(0, 1)(rng);
  EXPECT_EQ(m.network().forward(x).at("final"), back.network().forward(x).at("final"));
  std::filesystem::remove(path);
}

TEST(ModelIo, HeaderLayout) {
  const auto bytes = serialize_model(make_model("1", 1));
  ASSERT_GE(bytes.size(), 12u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SVRN");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  EXPECT_EQ(version, kModelVersion);
}

TEST(ModelIo, FlippedPayloadByteFailsChecksum) {
  auto bytes = serialize_model(make_model("1", 2));
  bytes[bytes.size() - 100] ^= 0x01;
  expect_format_error(bytes, "checksum");
}

TEST(ModelIo, TruncatedFileIsRejected) {
  auto bytes = serialize_model(make_model("1", 2));
  bytes.resize(bytes.size() - 7);
  EXPECT_THROW(deserialize_model(bytes), Error);
  bytes.resize(10);
  expect_format_error(bytes, "truncated");
}

TEST(ModelIo, BadMagicAndVersion) {
  auto bytes = serialize_model(make_model("1", 2));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  expect_format_error(bad_magic, "magic");
  auto bad_version = bytes;
  bad_version[4] = 9;
  expect_format_error(bad_version, "version");
}

TEST(ModelIo, StageTwoModelLoadedAsStageOneIsASpecMismatch) {
  const auto bytes = serialize_model(make_model("2-nose", 4));
  expect_format_error(bytes, "spec mismatch", std::string("1"));
  EXPECT_NO_THROW(deserialize_model(bytes, std::string("2-nose")));
}

TEST(ModelIo, MissingFileIsAnIoError) {
  try {
    load_model("/nonexistent/model.svrn");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
}
