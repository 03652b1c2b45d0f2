#include <gtest/gtest.h>

#include <cmath>

#include "svrnn/error.hpp"
#include "svrnn/parsing.hpp"
#include "test_support.hpp"

using namespace svrnn;
using svrnn::testing::rel_error;

namespace {

const Variant kVariants[] = {Variant::cnn_s, Variant::cnn_deep, Variant::rnn, Variant::rnn_g};

LabelMap random_labels(std::size_t h, std::size_t w, std::size_t classes, std::mt19937_64& rng) {
  LabelMap l(h, w);
  std::uniform_int_distribution<int> pick(0, int(classes) - 1);
  // Blocky labels so that boundaries are a minority.
  for (std::size_t y = 0; y < h; y += 2)
    for (std::size_t x = 0; x < w; x += 2) {
      const auto c = std::uint8_t(pick(rng));
      for (std::size_t dy = 0; dy < 2 && y + dy < h; ++dy)
        for (std::size_t dx = 0; dx < 2 && x + dx < w; ++dx) l.at(y + dy, x + dx) = c;
    }
  return l;
}

Tensor<double> perfect_logits(Shape s, std::span<const LabelMap> labels, double margin) {
  Tensor<double> t(s, -margin);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x) t.at(n, labels[n].at(y, x), y, x) = margin;
  return t;
}

}  // namespace

TEST(NetworkSpec, TextRoundTripForEveryVariant) {
  for (const auto v : kVariants)
    for (std::size_t size : {64, 128, 512}) {
      const auto spec = build_stage1(3, size, v);
      EXPECT_EQ(NetworkSpec::parse(spec.to_text()), spec) << to_string(v) << " " << size;
    }
  for (const char* net : {"eye", "nose", "mouth"}) {
    const auto spec = build_stage2(net);
    EXPECT_EQ(NetworkSpec::parse(spec.to_text()), spec) << net;
  }
}

TEST(NetworkSpec, ParseRejectsMalformedText) {
  const auto text = build_stage1(3, 64).to_text();
  EXPECT_THROW(NetworkSpec::parse("bogus line\n" + text), Error);
  EXPECT_THROW(NetworkSpec::parse(text + "conv x <- nowhere out=4 kernel=3\n"), Error);
}

TEST(Stage1, FinalHeadMatchesInputExtent) {
  const auto spec = build_stage1(3, 128);
  const auto shapes = spec.infer_shapes(4);
  EXPECT_EQ(shapes.at(spec.heads.final), (Shape{4, 3, 128, 128}));
  EXPECT_EQ(shapes.at(spec.heads.coarse).c, 3u);
  EXPECT_EQ(shapes.at(spec.heads.gate).c, 1u);
}

TEST(Stage1, ParameterBudget) {
  for (const auto v : kVariants)
    for (std::size_t size : {128, 512}) {
      const auto spec = build_stage1(3, size, v);
      EXPECT_LE(spec.parameter_count(), 120000u) << to_string(v) << " " << size;
      EXPECT_LE(build_stage1(11, size, v).parameter_count(), 120000u);
    }
}

TEST(Stage1, LayerCensus) {
  EXPECT_EQ(build_stage1(3, 128, Variant::rnn_g).count(LayerKind::srnn), 1u);
  EXPECT_EQ(build_stage1(3, 128, Variant::rnn).count(LayerKind::srnn), 1u);
  EXPECT_EQ(build_stage1(3, 128, Variant::cnn_s).count(LayerKind::srnn), 0u);
  EXPECT_EQ(build_stage1(3, 128, Variant::cnn_deep).count(LayerKind::srnn), 0u);
  const auto spec = build_stage1(3, 128);
  EXPECT_EQ(spec.count(LayerKind::pool), 2u);
  const auto multi = build_stage1(3, 512);
  EXPECT_EQ(multi.count(LayerKind::pool), 4u);
  EXPECT_EQ(multi.count(LayerKind::deconv), 2u);
  EXPECT_EQ(multi.infer_shapes(1).at(multi.heads.final), (Shape{1, 3, 512, 512}));
}

TEST(Stage1, GatedFlagFollowsVariant) {
  for (const auto v : {Variant::rnn, Variant::rnn_g}) {
    const auto spec = build_stage1(3, 64, v);
    for (const auto& l : spec.layers)
      if (l.kind == LayerKind::srnn) EXPECT_EQ(l.gated, v == Variant::rnn_g);
  }
}

TEST(Stage1, RejectsUnsupportedSize) {
  EXPECT_THROW(build_stage1(3, 130), Error);
  EXPECT_THROW(build_stage1(3, 4), Error);
  EXPECT_THROW(build_stage1(1, 128), Error);
}

TEST(Stage1, HeadExtentsMatchSupervision) {
  const auto spec = build_stage1(3, 128);
  std::mt19937_64 rng(3);
  std::vector<LabelMap> labels{random_labels(128, 128, 3, rng)};
  const auto t = make_targets(spec, labels);
  const auto shapes = spec.infer_shapes(1);
  const Shape c = shapes.at(spec.heads.coarse), g = shapes.at(spec.heads.gate),
              f = shapes.at(spec.heads.final);
  EXPECT_EQ(t.coarse_labels[0].height, c.h);
  EXPECT_EQ(t.coarse_labels[0].width, c.w);
  EXPECT_EQ(t.gate_gt[0].height, g.h);
  EXPECT_EQ(t.gate_gt[0].width, g.w);
  EXPECT_EQ(t.labels[0].height, f.h);
  EXPECT_EQ(t.labels[0].width, f.w);
}

TEST(Stage2, OutputExtentsAndCensus) {
  for (const char* net : {"eye", "nose", "mouth"}) {
    const auto spec = build_stage2(net);
    const auto [ph, pw] = component_patch(net);
    const auto shapes = spec.infer_shapes(1);
    EXPECT_EQ(shapes.at(spec.heads.final),
              (Shape{1, component_vocabulary(net).size(), ph, pw}))
        << net;
    EXPECT_EQ(spec.count(LayerKind::conv), 5u);
    EXPECT_EQ(spec.count(LayerKind::pool), 2u);
    EXPECT_EQ(spec.count(LayerKind::deconv), 2u);
    EXPECT_EQ(spec.count(LayerKind::srnn), 0u);
  }
  EXPECT_EQ(build_stage2("eye").infer_shapes(1).at("final"), (Shape{1, 3, 64, 64}));
  EXPECT_EQ(build_stage2("mouth").infer_shapes(1).at("final"), (Shape{1, 4, 32, 64}));
  EXPECT_THROW(build_stage2("ear"), Error);
}

TEST(ParamStore, InitializationIsSeededAndSpectral) {
  const auto spec = build_stage1(3, 64);
  ParamStore<double> a(spec), b(spec), c(spec);
  a.initialize(7);
  b.initialize(7);
  c.initialize(8);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].value, b[i].value);
    differs |= !(a[i].value == c[i].value);
    if (a[i].spectral) {
      const auto s = a[i].value.shape();
      Matrix<double> m(s.h, s.w);
      std::copy(a[i].value.values().begin(), a[i].value.values().end(), m.values().begin());
      EXPECT_LE(spectral_norm(m), 1.0 + 1e-9) << a[i].name;
    }
  }
  EXPECT_TRUE(differs);
  EXPECT_EQ(a.get("gate.bias").value.data()[0], 1.0);
}

TEST(TotalLoss, PerfectPredictionsGiveNearZeroLoss) {
  const auto spec = build_stage1(3, 16);
  std::mt19937_64 rng(4);
  std::vector<LabelMap> labels{random_labels(16, 16, 3, rng), random_labels(16, 16, 3, rng)};
  const auto t = make_targets(spec, labels);
  const auto shapes = spec.infer_shapes(2);
  std::map<std::string, Tensor<double>> out;
  out[spec.heads.coarse] = perfect_logits(shapes.at(spec.heads.coarse), t.coarse_labels, 20);
  out[spec.heads.final] = perfect_logits(shapes.at(spec.heads.final), t.labels, 20);
  Tensor<double> gate(shapes.at(spec.heads.gate));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t y = 0; y < gate.shape().h; ++y)
      for (std::size_t x = 0; x < gate.shape().w; ++x)
        gate.at(n, 0, y, x) = t.gate_gt[n].at(y, x) ? 20.0 : -20.0;
  out[spec.heads.gate] = gate;
  EXPECT_LT(total_loss(spec, out, t).total, 1e-6);
}

TEST(TotalLoss, ZeroGateWeightLeavesTheTwoCrossEntropies) {
  const auto spec = build_stage1(3, 16);
  std::mt19937_64 rng(5);
  std::vector<LabelMap> labels{random_labels(16, 16, 3, rng)};
  const auto t = make_targets(spec, labels);
  std::map<std::string, Tensor<double>> out;
  for (const auto& [name, s] : spec.infer_shapes(1))
    if (name == spec.heads.coarse || name == spec.heads.gate || name == spec.heads.final)
      out[name] = svrnn::testing::random_tensor<double>(s, rng, -2, 2);
  const auto full = total_loss(spec, out, t);
  const auto no_gate = total_loss(spec, out, t, LossWeights{1, 0, 1});
  EXPECT_EQ(no_gate.total, full.coarse + full.final);
  EXPECT_EQ(no_gate.grads.count(spec.heads.gate), 0u);
  EXPECT_THROW(total_loss(spec, std::map<std::string, Tensor<double>>{}, t), Error);
}

TEST(TotalLoss, EmptyGateMaskSkipsTheGateTerm) {
  const auto spec = build_stage1(3, 16);
  std::mt19937_64 rng(6);
  std::vector<LabelMap> labels{LabelMap(16, 16, 1)};
  auto t = make_targets(spec, labels);
  t.gate_mask = LossMask(1, t.gate_gt[0].height, t.gate_gt[0].width, 0);
  std::map<std::string, Tensor<double>> out;
  for (const auto& [name, s] : spec.infer_shapes(1))
    if (name == spec.heads.coarse || name == spec.heads.gate || name == spec.heads.final)
      out[name] = svrnn::testing::random_tensor<double>(s, rng);
  const auto r = total_loss(spec, out, t);
  EXPECT_TRUE(r.gate_skipped);
  EXPECT_EQ(r.gate, 0.0);
}

// Finite differences of the full three-headed loss through the whole network,
// sampled over every parameter tensor and the input.
TEST(TotalLoss, NetworkGradientMatchesFiniteDifferences) {
  for (const auto v : {Variant::rnn_g, Variant::rnn, Variant::cnn_s, Variant::cnn_deep}) {
    const auto spec = build_stage1(3, 8, v);
    ParamStore<double> ps(spec);
    ps.initialize(11);
    std::mt19937_64 rng(12);
    // Non-zero biases so that every path carries signal.
    for (auto& p : ps.params())
      if (p.name.ends_with(".bias"))
        for (auto& b : p.value.values()) b += std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
    Network<double> net(spec, ps);
    const auto x = svrnn::testing::random_tensor<double>(Shape{2, 3, 8, 8}, rng, 0, 1);
    std::vector<LabelMap> labels{random_labels(8, 8, 3, rng), random_labels(8, 8, 3, rng)};
    const auto targets = make_targets(spec, labels);

    ForwardTape<double> tape;
    const auto out = net.forward(x, &tape);
    const auto loss = total_loss(spec, out, targets);
    const auto grads = net.backward(tape, loss.grads);
    ASSERT_EQ(grads.size(), ps.size());

    double worst = 0;
    std::uniform_int_distribution<std::size_t> any;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto& value = net.params()[i].value;
      for (int k = 0; k < 6; ++k) {
        const std::size_t j = any(rng) % value.size();
        const double saved = value.data()[j];
        const double h = 1e-5 * std::max(1.0, std::abs(saved));
        value.data()[j] = saved + h;
        const double plus = total_loss(spec, net.forward(x), targets).total;
        value.data()[j] = saved - h;
        const double minus = total_loss(spec, net.forward(x), targets).total;
        value.data()[j] = saved;
        const double err = rel_error(grads[i].data()[j], (plus - minus) / (2 * h));
        EXPECT_LE(err, 1e-4) << to_string(v) << " " << net.params()[i].name << "[" << j << "]";
        worst = std::max(worst, err);
      }
    }
    EXPECT_LE(worst, 1e-4);
  }
}

TEST(Network, EveryParameterReceivesGradient) {
  for (const auto v : kVariants) {
    const auto spec = build_stage1(3, 32, v);
    ParamStore<double> ps(spec);
    ps.initialize(21);
    Network<double> net(spec, ps);
    std::mt19937_64 rng(22);
    const auto x = svrnn::testing::random_tensor<double>(Shape{2, 3, 32, 32}, rng, 0, 1);
    std::vector<LabelMap> labels{random_labels(32, 32, 3, rng), random_labels(32, 32, 3, rng)};
    ForwardTape<double> tape;
    const auto out = net.forward(x, &tape);
    const auto grads = net.backward(tape, total_loss(spec, out, make_targets(spec, labels)).grads);
    for (std::size_t i = 0; i < grads.size(); ++i) {
      double norm = 0;
      for (double g : grads[i].values()) norm += g * g;
      EXPECT_GT(norm, 0.0) << to_string(v) << " " << ps[i].name;
    }
  }
}

TEST(Network, WorkersDoNotChangeOutputs) {
  const auto spec = build_stage1(3, 32);
  ParamStore<float> ps(spec);
  ps.initialize(31);
  Network<float> net(spec, ps);
  std::mt19937_64 rng(32);
  const auto x = svrnn::testing::random_tensor<float>(Shape{1, 3, 32, 32}, rng, 0, 1);
  EXPECT_EQ(net.forward(x, nullptr, nullptr, 1).at(spec.heads.final),
            net.forward(x, nullptr, nullptr, 4).at(spec.heads.final));
}

TEST(Network, RejectsMissingParameters) {
  const auto spec = build_stage1(3, 32);
  ParamStore<float> empty;
  EXPECT_THROW(Network<float>(spec, empty), Error);
}
