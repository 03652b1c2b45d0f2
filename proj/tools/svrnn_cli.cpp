// Command-line front end: gen-data, train, eval, infer, bench.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "svrnn/config.hpp"
#include "svrnn/data.hpp"
#include "svrnn/error.hpp"
#include "svrnn/model_io.hpp"
#include "svrnn/pipeline.hpp"
#include "svrnn/training.hpp"

using namespace svrnn;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "Run configuration file (key = value lines)");
  cmd->add_option("-s,--set", c.overrides, "Override a configuration field, key=value")
      ->take_all();
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    require(eq != std::string::npos, ErrorKind::config, "override '" + kv + "' is not key=value");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
}

RunConfig load_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : RunConfig::load(c.config_path);
  apply_overrides(cfg, c.overrides);
  return cfg;
}

std::vector<Point> read_points(const std::string& path) {
  std::ifstream in(path);
  require(bool(in), ErrorKind::io, "cannot read points " + path);
  std::vector<Point> pts;
  Point p;
  while (in >> p.x >> p.y) pts.push_back(p);
  require(pts.size() == 5, ErrorKind::format,
          path + ": expected 5 keypoints, found " + std::to_string(pts.size()));
  return pts;
}

/// name=path pairs for the stage-2 networks.
std::map<std::string, Model> load_components(const std::vector<std::string>& specs) {
  std::map<std::string, Model> out;
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    require(eq != std::string::npos, ErrorKind::config,
            "component '" + s + "' is not name=path (eye, nose, mouth)");
    const std::string name = s.substr(0, eq);
    require(name == "eye" || name == "nose" || name == "mouth", ErrorKind::config,
            "unknown component network '" + name + "'");
    out[name] = load_model(s.substr(eq + 1), "2-" + name);
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  require(bool(out), ErrorKind::io, "cannot write " + path);
  out << text;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Common& common, const std::string& out_dir) {
  const RunConfig cfg = load_config(common);
  const auto train = generate_synthetic(cfg.synth);
  save_dataset(fs::path(out_dir) / "train", train);
  std::size_t test_count = 0;
  if (cfg.synth_test_count > 0) {
    const auto test = generate_synthetic(cfg.synth_test());
    save_dataset(fs::path(out_dir) / "test", test);
    test_count = test.size();
  }
  std::printf("wrote %zu training and %zu test records to %s\n", train.size(), test_count,
              out_dir.c_str());
  return 0;
}

int cmd_train(const Common& common, const std::string& model_path, const std::string& log_path) {
  const RunConfig cfg = load_config(common);
  const auto train = training_records(cfg);
  const auto held = test_records(cfg);
  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path);
    require(bool(log), ErrorKind::io, "cannot write " + log_path);
    log << "epoch lr loss loss_coarse loss_gate loss_final heldout_accuracy seconds\n";
  }
  std::printf("training stage %s %s on %zu records (%zu held out), %zu parameters\n",
              cfg.stage.c_str(), std::string(to_string(cfg.variant)).c_str(), train.size(),
              held.size(), cfg.network().parameter_count());
  const Model m = train_model(cfg, train, held, [&](const EpochLog& e) {
    char line[256];
    std::snprintf(line, sizeof line, "%zu %.6g %.6f %.6f %.6f %.6f %.6f %.2f", e.epoch,
                  e.learning_rate, e.loss, e.loss_coarse, e.loss_gate, e.loss_final,
                  e.heldout_accuracy, e.seconds);
    std::printf("epoch %s\n", line);
    std::fflush(stdout);
    if (log) log << line << "\n" << std::flush;
  });
  save_model(model_path, m);
  std::printf("saved %s\n", model_path.c_str());
  return 0;
}

int cmd_eval(const Common& common, const std::string& model_path,
             const std::vector<std::string>& components, const std::string& data_dir,
             const std::string& json_path) {
  Model m = load_model(model_path);
  RunConfig cfg = m.config;
  if (!common.config_path.empty()) cfg = RunConfig::load(common.config_path);
  apply_overrides(cfg, common.overrides);
  if (!data_dir.empty()) cfg.test_dir = data_dir;
  const auto records = test_records(cfg);
  require(!records.empty(), ErrorKind::config, "no evaluation records (set test_dir or synth)");

  EvalReport report;
  if (!components.empty()) {
    require(m.spec.stage == "1", ErrorKind::format,
            "spec mismatch: two-stage evaluation needs a stage-1 model");
    require(cfg.synth.fine, ErrorKind::value,
            "vocabulary mismatch: two-stage evaluation needs fine labels (synth.fine = true)");
    TwoStageModels models{m, load_components(components)};
    report = evaluate_two_stage(models, records, cfg.workers);
  } else {
    require(cfg.stage == m.spec.stage, ErrorKind::config,
            "config stage " + cfg.stage + " does not match model stage " + m.spec.stage);
    report = evaluate(m.network(), cfg, records);
  }
  std::printf("%s", report.to_text().c_str());
  if (report.classes.size() == fine_vocabulary().size())
    std::printf("mean component F %.4f\n", component_f_measure(report));
  if (!json_path.empty()) write_text(json_path, report.to_json() + "\n");
  return 0;
}

int cmd_infer(const std::string& model_path, const std::string& image_path,
              const std::string& out_path, const std::string& gate_path,
              const std::vector<std::string>& components, const std::string& points_path,
              int workers) {
  const Model m = load_model(model_path);
  const Image img = read_png_rgb(image_path);
  const auto net = m.network();
  LabelMap labels;
  if (!components.empty()) {
    require(m.spec.stage == "1", ErrorKind::format,
            "spec mismatch: two-stage inference needs a stage-1 model");
    require(!points_path.empty(), ErrorKind::config, "two-stage inference needs --points");
    TwoStageModels models{m, load_components(components)};
    labels = run_two_stage(models, img, read_points(points_path), workers);
  } else {
    labels = predict_image(net, img, workers);
  }
  write_png_labels(out_path, labels);
  std::printf("wrote %s (%zux%zu)\n", out_path.c_str(), labels.width, labels.height);

  if (!gate_path.empty()) {
    require(!m.spec.heads.gate.empty(), ErrorKind::config, "model has no gate head");
    Affine back;
    const Image input = fit_to_input(img, m.spec.in_height, m.spec.in_width, &back);
    const auto pred = predict(net, input, workers);
    const Shape gs = pred.gate.shape();
    const double fy = double(m.spec.in_height) / double(gs.h);
    const double fx = double(m.spec.in_width) / double(gs.w);
    const Affine to_net = back.inverse();
    const Shape is = img.shape();
    std::vector<std::uint8_t> pixels(is.h * is.w);
    for (std::size_t y = 0; y < is.h; ++y)
      for (std::size_t x = 0; x < is.w; ++x) {
        const Point q = to_net.apply({x + 0.5, y + 0.5});
        const auto gy = std::min<std::size_t>(gs.h - 1, std::size_t(std::max(0.0, q.y / fy)));
        const auto gx = std::min<std::size_t>(gs.w - 1, std::size_t(std::max(0.0, q.x / fx)));
        pixels[y * is.w + x] =
            std::uint8_t(std::lround(255.0 * double(pred.gate.at(0, 0, gy, gx))));
      }
    write_png_gray(gate_path, is.h, is.w, pixels);
    std::printf("wrote %s\n", gate_path.c_str());
  }
  return 0;
}

int cmd_bench(const std::string& model_path, std::size_t size, std::size_t iterations,
              int threads, std::size_t scan_size) {
  NetworkSpec spec;
  ParamStore<float> params;
  if (!model_path.empty()) {
    const Model m = load_model(model_path);
    spec = m.spec;
    params = m.params;
    if (spec.stage == "1" && size != 0 && size != spec.in_height) {
      // Same weights at a different input extent.
      NetworkSpec resized = build_stage1(spec.vocabulary, size, m.config.variant);
      require(resized.param_shapes().size() == spec.param_shapes().size(), ErrorKind::config,
              "cannot rebuild model at size " + std::to_string(size));
      spec = resized;
    }
  } else {
    spec = build_stage1(3, size == 0 ? 128 : size);
    params = ParamStore<float>(spec);
    params.initialize(1);
  }
  BenchReport r = bench_network(Network<float>(spec, params), iterations, threads);
  if (scan_size > 0) {
    const auto [one, many] = bench_scan(scan_size, 8, std::max<std::size_t>(iterations / 2, 3),
                                        threads);
    r.scan_single = one;
    r.scan_multi = many;
  }
  std::printf("%s", r.to_text().c_str());
  std::printf("reference: 500 fps at 128x128 is 2.0 ms per image\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gated spatial RNN face parsing"};
  app.require_subcommand(1);

  Common gen_common, train_common, eval_common;
  std::string gen_out = "data";
  auto* gen = app.add_subcommand("gen-data", "Write the synthetic dataset as PNG files");
  add_common(gen, gen_common);
  gen->add_option("-o,--out", gen_out, "Output directory (train/ and test/ are created)");

  std::string model_out = "model.svrn", log_out;
  auto* train = app.add_subcommand("train", "Train a network and save the model file");
  add_common(train, train_common);
  train->add_option("-o,--out", model_out, "Model file to write");
  train->add_option("--log", log_out, "Per-epoch training log");

  std::string eval_model, eval_data, eval_json;
  std::vector<std::string> eval_components;
  auto* eval = app.add_subcommand("eval", "Score a model (or the two-stage pipeline)");
  add_common(eval, eval_common);
  eval->add_option("-m,--model", eval_model, "Model file")->required();
  eval->add_option("--data", eval_data, "Dataset directory (default: the model's test split)");
  eval->add_option("--components", eval_components,
                   "Stage-2 models as eye=PATH nose=PATH mouth=PATH")
      ->take_all();
  eval->add_option("--json", eval_json, "Also write the report as JSON");

  std::string infer_model, infer_image, infer_out = "labels.png", infer_gate, infer_points;
  std::vector<std::string> infer_components;
  int infer_workers = 1;
  auto* infer = app.add_subcommand("infer", "Label one image");
  infer->add_option("-m,--model", infer_model, "Model file")->required();
  infer->add_option("-i,--image", infer_image, "Input PNG")->required();
  infer->add_option("-o,--out", infer_out, "Palette PNG of class ids");
  infer->add_option("--gate", infer_gate, "Grayscale PNG of the gate map");
  infer->add_option("--components", infer_components,
                    "Stage-2 models as eye=PATH nose=PATH mouth=PATH")
      ->take_all();
  infer->add_option("--points", infer_points, "Keypoint file (5 lines 'x y') for two-stage");
  infer->add_option("-w,--workers", infer_workers, "Scan workers")->check(CLI::Range(1, 64));

  std::string bench_model;
  std::size_t bench_size = 0, bench_iters = 20, bench_scan_size = 512;
  int bench_threads = 4;
  auto* bench = app.add_subcommand("bench", "Time inference per image and per layer");
  bench->add_option("-m,--model", bench_model, "Model file (default: untrained stage-1 net)");
  bench->add_option("--size", bench_size, "Square input extent (default: 128 or the model's)");
  bench->add_option("-n,--iterations", bench_iters, "Timed iterations (at least 10)");
  bench->add_option("-t,--threads", bench_threads, "Workers for the multi-thread run")
      ->check(CLI::Range(1, 64));
  bench->add_option("--scan-size", bench_scan_size, "Scan benchmark extent (0 skips it)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) return cmd_gen_data(gen_common, gen_out);
    if (*train) return cmd_train(train_common, model_out, log_out);
    if (*eval) return cmd_eval(eval_common, eval_model, eval_components, eval_data, eval_json);
    if (*infer)
      return cmd_infer(infer_model, infer_image, infer_out, infer_gate, infer_components,
                       infer_points, infer_workers);
    if (*bench) return cmd_bench(bench_model, bench_size, bench_iters, bench_threads, bench_scan_size);
  } catch (const Error& e) {
    std::fprintf(stderr, "error (%s): %s\n", std::string(to_string(e.kind())).c_str(), e.what());
    return int(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
