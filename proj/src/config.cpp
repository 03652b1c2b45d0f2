#include "svrnn/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace svrnn {

std::string_view to_string(Precision p) { return p == Precision::f64 ? "double" : "float"; }

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad(std::string_view key, std::string_view value, std::string_view expected) {
  fail(ErrorKind::config, "config field '" + std::string(key) + "': invalid value '" +
                              std::string(value) + "' (expected " + std::string(expected) + ")");
}

template <typename N>
N number(std::string_view key, std::string_view v) {
  N out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad(key, v, "a number");
  return out;
}

bool boolean(std::string_view key, std::string_view v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  bad(key, v, "true or false");
}

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_FIELD(k, m)                                                                       \
  Field{k, [](RunConfig& c, std::string_view v) { c.m = number<std::size_t>(k, v); },         \
        [](const RunConfig& c) { return std::to_string(c.m); }}
#define REAL_FIELD(k, m)                                                                       \
  Field{k, [](RunConfig& c, std::string_view v) { c.m = number<double>(k, v); },              \
        [](const RunConfig& c) { return fmt(c.m); }}
#define BOOL_FIELD(k, m)                                                                       \
  Field{k, [](RunConfig& c, std::string_view v) { c.m = boolean(k, v); },                     \
        [](const RunConfig& c) { return std::string(c.m ? "true" : "false"); }}
#define TEXT_FIELD(k, m)                                                                       \
  Field{k, [](RunConfig& c, std::string_view v) { c.m = std::string(v); },                    \
        [](const RunConfig& c) { return c.m; }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"seed", [](RunConfig& c, std::string_view v) { c.seed = number<std::uint64_t>("seed", v); },
            [](const RunConfig& c) { return std::to_string(c.seed); }},
      TEXT_FIELD("stage", stage),
      Field{"variant", [](RunConfig& c, std::string_view v) { c.variant = parse_variant(v); },
            [](const RunConfig& c) { return std::string(to_string(c.variant)); }},
      Field{"precision",
            [](RunConfig& c, std::string_view v) {
              if (v == "float") c.precision = Precision::f32;
              else if (v == "double") c.precision = Precision::f64;
              else bad("precision", v, "float or double");
            },
            [](const RunConfig& c) { return std::string(to_string(c.precision)); }},
      TEXT_FIELD("vocabulary", vocabulary),
      SIZE_FIELD("input_size", input_size),
      Field{"workers", [](RunConfig& c, std::string_view v) { c.workers = number<int>("workers", v); },
            [](const RunConfig& c) { return std::to_string(c.workers); }},
      SIZE_FIELD("epochs", epochs),
      SIZE_FIELD("batch_size", batch_size),
      REAL_FIELD("learning_rate", learning_rate),
      REAL_FIELD("momentum", momentum),
      REAL_FIELD("weight_decay", weight_decay),
      REAL_FIELD("lr_decay", lr_decay),
      SIZE_FIELD("lr_step", lr_step),
      REAL_FIELD("loss.coarse", loss.coarse),
      REAL_FIELD("loss.gate", loss.gate),
      REAL_FIELD("loss.final", loss.final),
      REAL_FIELD("boundary_ratio", boundary_ratio),
      REAL_FIELD("background_factor", background_factor),
      BOOL_FIELD("augment", augment),
      REAL_FIELD("augment.rotation", augmentation.max_rotation_deg),
      REAL_FIELD("augment.scale_min", augmentation.min_scale),
      REAL_FIELD("augment.scale_max", augmentation.max_scale),
      REAL_FIELD("augment.translate", augmentation.max_translate),
      REAL_FIELD("augment.mirror", augmentation.mirror_probability),
      REAL_FIELD("crop_jitter", crop_jitter),
      TEXT_FIELD("train_dir", train_dir),
      TEXT_FIELD("test_dir", test_dir),
      Field{"synth.seed", [](RunConfig& c, std::string_view v) { c.synth.seed = number<std::uint64_t>("synth.seed", v); },
            [](const RunConfig& c) { return std::to_string(c.synth.seed); }},
      SIZE_FIELD("synth.count", synth.count),
      SIZE_FIELD("synth.test_count", synth_test_count),
      SIZE_FIELD("synth.height", synth.height),
      SIZE_FIELD("synth.width", synth.width),
      BOOL_FIELD("synth.fine", synth.fine),
      REAL_FIELD("synth.clutter", synth.clutter),
      BOOL_FIELD("synth.multi_face", synth.multi_face),
      SIZE_FIELD("synth.min_faces", synth.min_faces),
      SIZE_FIELD("synth.max_faces", synth.max_faces),
      SIZE_FIELD("eval_size", eval_size),
  };
  return table;
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  const std::string k = trim(key), v = trim(value);
  for (const auto& f : fields()) {
    if (k == f.key) {
      f.set(*this, v);
      return;
    }
  }
  fail(ErrorKind::config, "unknown config field '" + k + "'");
}

void RunConfig::validate() const {
  auto check = [](bool ok, const char* key, const std::string& why) {
    if (!ok) fail(ErrorKind::config, std::string("config field '") + key + "': " + why);
  };
  check(stage == "1" || stage == "2-eye" || stage == "2-nose" || stage == "2-mouth", "stage",
        "must be 1, 2-eye, 2-nose or 2-mouth");
  check(vocabulary == "coarse" || vocabulary == "fine", "vocabulary", "must be coarse or fine");
  check(stage != "1" || (input_size >= 8 && input_size % 4 == 0), "input_size",
        "must be a multiple of 4, at least 8");
  check(workers >= 1, "workers", "must be at least 1");
  check(epochs >= 1, "epochs", "must be at least 1");
  check(batch_size >= 1, "batch_size", "must be at least 1");
  check(learning_rate > 0, "learning_rate", "must be positive");
  check(momentum >= 0 && momentum < 1, "momentum", "must lie in [0, 1)");
  check(weight_decay >= 0, "weight_decay", "must be non-negative");
  check(lr_decay > 0 && lr_decay <= 1, "lr_decay", "must lie in (0, 1]");
  check(loss.coarse >= 0 && loss.gate >= 0 && loss.final >= 0, "loss",
        "weights must be non-negative");
  check(boundary_ratio >= 0, "boundary_ratio", "must be non-negative");
  check(background_factor >= 0, "background_factor", "must be non-negative");
  check(augmentation.max_rotation_deg >= 0 && augmentation.max_rotation_deg <= 180,
        "augment.rotation", "must lie in [0, 180]");
  check(augmentation.min_scale > 0 && augmentation.min_scale <= augmentation.max_scale,
        "augment.scale_min", "must be positive and not exceed augment.scale_max");
  check(augmentation.max_translate >= 0 && augmentation.max_translate < 0.5, "augment.translate",
        "must lie in [0, 0.5)");
  check(augmentation.mirror_probability >= 0 && augmentation.mirror_probability <= 1,
        "augment.mirror", "must lie in [0, 1]");
  check(crop_jitter >= 0 && crop_jitter < 0.5, "crop_jitter", "must lie in [0, 0.5)");
  check(stage == "1" || synth.fine || !train_dir.empty(), "synth.fine",
        "stage-2 training needs fine labels");
  if (train_dir.empty()) synth.validate();
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig c;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::config, "config line " + std::to_string(lineno) + ": expected key = value");
    c.set(line.substr(0, eq), line.substr(eq + 1));
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(bool(in), ErrorKind::io, "cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

const std::vector<std::string>& RunConfig::class_names() const {
  if (stage == "1") return fine() ? fine_vocabulary() : coarse_vocabulary();
  return component_vocabulary(stage.substr(2));
}

NetworkSpec RunConfig::network() const {
  if (stage == "1") return build_stage1(class_names(), input_size, variant);
  return build_stage2(stage.substr(2));
}

SynthConfig RunConfig::synth_test() const {
  SynthConfig t = synth;
  t.seed = synth.seed + 0x9E3779B97F4A7C15ull;
  t.count = synth_test_count;
  return t;
}

}  // namespace svrnn
