#include "svrnn/model_io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace svrnn {

static_assert(std::endian::native == std::endian::little, "model files assume a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'V', 'R', 'N'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void u16(std::uint16_t v) { bytes(&v, 2); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in, std::size_t end) : in_(in), end_(end) {}
  void bytes(void* p, std::size_t n) {
    require(pos_ + n <= end_, ErrorKind::format, "model file is truncated");
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint16_t u16() {
    std::uint16_t v;
    bytes(&v, 2);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::string text(std::size_t n) {
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool done() const { return pos_ == end_; }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(const std::uint8_t* p, std::size_t n) {
  return std::uint32_t(crc32(crc32(0L, Z_NULL, 0), p, uInt(n)));
}

constexpr std::string_view kSeparator = "---\n";

}  // namespace

std::vector<std::uint8_t> serialize_model(const Model& m) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kModelVersion);
  const std::string header = m.config.to_text() + std::string(kSeparator) + m.spec.to_text();
  w.u32(std::uint32_t(header.size()));
  w.bytes(header.data(), header.size());
  w.u32(std::uint32_t(m.params.size()));
  for (const auto& p : m.params.params()) {
    w.u16(std::uint16_t(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    const Shape s = p.value.shape();
    for (auto e : {s.n, s.c, s.h, s.w}) w.u32(std::uint32_t(e));
    w.bytes(p.value.data(), p.value.size() * sizeof(float));
  }
  w.u32(crc(w.out.data(), w.out.size()));
  return std::move(w.out);
}

Model deserialize_model(const std::vector<std::uint8_t>& bytes,
                        const std::optional<std::string>& expected_stage) {
  require(bytes.size() >= 16, ErrorKind::format, "model file is truncated");
  require(std::memcmp(bytes.data(), kMagic, 4) == 0, ErrorKind::format,
          "not a model file (bad magic)");
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  Reader r(bytes, bytes.size() - 4);
  char magic[4];
  r.bytes(magic, 4);
  const std::uint32_t version = r.u32();
  require(version == kModelVersion, ErrorKind::format,
          "unsupported model version " + std::to_string(version));
  require(crc(bytes.data(), bytes.size() - 4) == stored, ErrorKind::format,
          "model checksum mismatch (file is corrupt or truncated)");

  const std::string header = r.text(r.u32());
  const auto sep = header.find(kSeparator);
  require(sep != std::string::npos, ErrorKind::format, "model header lacks a spec section");
  Model m;
  m.config = RunConfig::parse(header.substr(0, sep));
  m.spec = NetworkSpec::parse(header.substr(sep + kSeparator.size()));
  if (expected_stage)
    require(m.spec.stage == *expected_stage, ErrorKind::format,
            "spec mismatch: model is stage " + m.spec.stage + ", expected stage " +
                *expected_stage);

  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    Param<float> p;
    p.name = r.text(r.u16());
    Shape s;
    s.n = r.u32();
    s.c = r.u32();
    s.h = r.u32();
    s.w = r.u32();
    p.value = Tensor<float>(s);
    r.bytes(p.value.data(), s.size() * sizeof(float));
    m.params.add(std::move(p));
  }
  require(r.done(), ErrorKind::format, "trailing bytes after parameter records");
  // Validates that every spec parameter is present exactly once with its shape.
  Network<float> check(m.spec, m.params);
  m.params = check.params();
  return m;
}

void save_model(const std::filesystem::path& path, const Model& m) {
  const auto bytes = serialize_model(m);
  std::ofstream out(path, std::ios::binary);
  require(bool(out), ErrorKind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  require(bool(out), ErrorKind::io, "write failed for " + path.string());
}

Model load_model(const std::filesystem::path& path,
                 const std::optional<std::string>& expected_stage) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), ErrorKind::io, "cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_model(bytes, expected_stage);
}

}  // namespace svrnn
