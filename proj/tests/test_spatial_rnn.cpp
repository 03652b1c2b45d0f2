#include <gtest/gtest.h>

#include <numeric>

#include "test_support.hpp"

using namespace svrnn;
using svrnn::testing::inner;
using svrnn::testing::max_fd_error;
using svrnn::testing::naive_scan;
using svrnn::testing::random_scan_params;
using svrnn::testing::random_srnn_params;
using svrnn::testing::random_tensor;

namespace {

ScanParams<double> scalar_params(double omega, double bias, Direction dir) {
  return ScanParams<double>{Matrix<double>(1, 1, {omega}), {bias}, dir};
}

Tensor<double> row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor<double>(Shape{1, 1, 1, n}, std::move(v));
}

}  // namespace

TEST(ScanGated, ClosedGatesReturnInput) {
  std::mt19937_64 rng(1);
  const auto x = random_tensor<float>(Shape{2, 3, 4, 5}, rng);
  const Tensor<float> g(x.shape(), 0.f);
  for (Direction d : kDirections) {
    EXPECT_EQ(scan_forward_gated(x, g, random_scan_params<float>(3, d, rng)), x);
  }
}

TEST(ScanGated, ThreeStepHandRecursion) {
  const auto h = scan_forward_gated(row({1, 1, 1}), Tensor<double>(Shape{1, 1, 1, 3}, 1.0),
                                    scalar_params(0.5, 0.0, Direction::left_to_right));
  EXPECT_EQ(h.values()[0], 1.0);
  EXPECT_EQ(h.values()[1], 1.5);
  EXPECT_EQ(h.values()[2], 1.75);
}

TEST(ScanGated, FirstNodeReceivesGatedBias) {
  const auto h = scan_forward_gated(row({2, 0}), Tensor<double>(Shape{1, 1, 1, 2}, 0.5),
                                    scalar_params(0.0, 4.0, Direction::right_to_left));
  // Right-to-left: node 1 is first and sees only g * b.
  EXPECT_EQ(h.values()[1], 2.0);
  EXPECT_EQ(h.values()[0], 4.0);
}

TEST(ScanGated, MatchesPerLaneOracleFloat) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> n_d(1, 2), c_d(1, 8), h_d(1, 6), w_d(1, 7);
  for (Direction dir : kDirections) {
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const Shape s{n_d(rng), c_d(rng), h_d(rng), w_d(rng)};
      const auto x = random_tensor<float>(s, rng);
      const auto g = random_tensor<float>(s, rng, 0.0, 1.0);
      const auto p = random_scan_params<float>(s.c, dir, rng, 1.0 / std::sqrt(double(s.c)));
      const auto fast = scan_forward_gated(x, g, p);
      const auto slow = naive_scan(x, &g, p.omega, p.bias, dir);
      for (std::size_t i = 0; i < fast.size(); ++i) {
        worst = std::max(worst, double(std::abs(fast.data()[i] - slow.data()[i])));
      }
    }
    EXPECT_LE(worst, 1e-5) << to_string(dir);
  }
}

TEST(ScanGated, MatchesPerLaneOracleDouble) {
  std::mt19937_64 rng(3);
  for (Direction dir : kDirections) {
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const Shape s{2, 8, 6, 7};
      const auto x = random_tensor<double>(s, rng);
      const auto g = random_tensor<double>(s, rng, 0.0, 1.0);
      const auto p = random_scan_params<double>(8, dir, rng, 0.35);
      const auto fast = scan_forward_gated(x, g, p);
      const auto slow = naive_scan(x, &g, p.omega, p.bias, dir);
      for (std::size_t i = 0; i < fast.size(); ++i) {
        worst = std::max(worst, std::abs(fast.data()[i] - slow.data()[i]));
      }
    }
    EXPECT_LE(worst, 1e-10) << to_string(dir);
  }
}

TEST(ScanGated, RejectsMismatchedShapesAndNaN) {
  std::mt19937_64 rng(4);
  const auto p = random_scan_params<float>(2, Direction::top_to_bottom, rng);
  const Tensor<float> x(Shape{1, 2, 3, 3});
  EXPECT_THROW(scan_forward_gated(x, Tensor<float>(Shape{1, 2, 3, 4}), p), Error);
  EXPECT_THROW(scan_forward_gated(Tensor<float>(Shape{1, 3, 3, 3}), Tensor<float>(Shape{1, 3, 3, 3}), p),
               Error);
  Tensor<float> bad = x;
  bad.data()[4] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(scan_forward_gated(bad, x, p), Error);
}

TEST(ScanPlain, ZeroParametersReturnInput) {
  std::mt19937_64 rng(5);
  const auto x = random_tensor<double>(Shape{1, 2, 3, 4}, rng);
  ScanParams<double> p{Matrix<double>(2, 2), {0.0, 0.0}, Direction::bottom_to_top};
  EXPECT_EQ(scan_forward_plain(x, p), x);
}

TEST(ScanPlain, UnitTransitionAccumulates) {
  const auto h = scan_forward_plain(row({1, 2, 3}), scalar_params(1.0, 0.0, Direction::left_to_right));
  EXPECT_EQ(h.values()[0], 1.0);
  EXPECT_EQ(h.values()[1], 3.0);
  EXPECT_EQ(h.values()[2], 6.0);
}

TEST(ScanPlain, EqualsGatedWithUnitGate) {
  std::mt19937_64 rng(6);
  for (Direction dir : kDirections) {
    const auto x = random_tensor<float>(Shape{2, 4, 5, 6}, rng);
    const auto p = random_scan_params<float>(4, dir, rng);
    const auto plain = scan_forward_plain(x, p);
    const auto gated = scan_forward_gated(x, Tensor<float>(x.shape(), 1.f), p);
    for (std::size_t i = 0; i < plain.size(); ++i) {
      EXPECT_NEAR(plain.data()[i], gated.data()[i], 1e-6);
    }
  }
}

TEST(IntegrateMax, ConstantMaps) {
  const Shape s{1, 2, 2, 2};
  const auto r = integrate_max(Tensor<float>(s, 1.f), Tensor<float>(s, 2.f), Tensor<float>(s, 3.f),
                               Tensor<float>(s, 4.f));
  for (float v : r.out.values()) EXPECT_EQ(v, 4.f);
  for (auto w : r.winner) EXPECT_EQ(w, 3);
}

TEST(IntegrateMax, TiesGoToLeftToRight) {
  std::mt19937_64 rng(7);
  const auto a = random_tensor<float>(Shape{1, 3, 2, 2}, rng);
  const auto r = integrate_max(a, a, a, a);
  EXPECT_EQ(r.out, a);
  for (auto w : r.winner) EXPECT_EQ(w, 0);
}

TEST(IntegrateMax, DominatesEveryInput) {
  std::mt19937_64 rng(8);
  const Shape s{2, 3, 4, 4};
  const auto a = random_tensor<float>(s, rng), b = random_tensor<float>(s, rng);
  const auto c = random_tensor<float>(s, rng), d = random_tensor<float>(s, rng);
  const auto r = integrate_max(a, b, c, d);
  const Tensor<float>* maps[4] = {&a, &b, &c, &d};
  for (std::size_t e = 0; e < s.size(); ++e) {
    bool hit = false;
    for (auto* m : maps) {
      EXPECT_GE(r.out.data()[e], m->data()[e]);
      hit |= r.out.data()[e] == m->data()[e];
    }
    EXPECT_TRUE(hit);
    EXPECT_EQ(r.out.data()[e], maps[r.winner[e]]->data()[e]);
  }
  EXPECT_THROW(integrate_max(a, b, c, Tensor<float>(Shape{1, 1, 1, 1})), Error);
}

TEST(ScanBackward, ClosedGatesDecoupleNodes) {
  std::mt19937_64 rng(9);
  for (Direction dir : kDirections) {
    const auto x = random_tensor<double>(Shape{1, 3, 4, 5}, rng);
    const Tensor<double> g(x.shape(), 0.0);
    const auto p = random_scan_params<double>(3, dir, rng);
    ScanTape<double> tape;
    scan_forward_gated(x, g, p, &tape);
    const auto go = random_tensor<double>(x.shape(), rng);
    const auto grads = scan_backward_gated(go, tape, p);
    EXPECT_EQ(grads.grad_x, go);
    for (double v : grads.grad_omega.values()) EXPECT_EQ(v, 0.0);
    // With closed gates h == x, so grad_g_i = grad_out_i * (omega x_{i-1} + b).
    const bool horizontal = is_horizontal(dir);
    const bool reverse = dir == Direction::right_to_left || dir == Direction::bottom_to_top;
    const Shape s = x.shape();
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t xx = 0; xx < s.w; ++xx) {
          long py = long(y), px = long(xx);
          if (horizontal) px += reverse ? 1 : -1;
          else py += reverse ? 1 : -1;
          double term = p.bias[c];
          if (py >= 0 && px >= 0 && py < long(s.h) && px < long(s.w)) {
            for (std::size_t k = 0; k < 3; ++k) term += p.omega(c, k) * x.at(0, k, py, px);
          }
          EXPECT_NEAR(grads.grad_g.at(0, c, y, xx), go.at(0, c, y, xx) * term, 1e-12);
        }
  }
}

TEST(ScanBackward, ZeroParametersPassGradientThrough) {
  std::mt19937_64 rng(10);
  const auto x = random_tensor<double>(Shape{1, 2, 3, 3}, rng);
  const auto g = random_tensor<double>(x.shape(), rng, 0, 1);
  ScanParams<double> p{Matrix<double>(2, 2), {0.0, 0.0}, Direction::top_to_bottom};
  ScanTape<double> tape;
  scan_forward_gated(x, g, p, &tape);
  const auto go = random_tensor<double>(x.shape(), rng);
  const auto grads = scan_backward_gated(go, tape, p);
  EXPECT_EQ(grads.grad_x, go);
  for (double v : grads.grad_g.values()) EXPECT_EQ(v, 0.0);
}

TEST(ScanBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  for (Direction dir : kDirections) {
    auto x = random_tensor<double>(Shape{1, 4, 5, 6}, rng);
    auto g = random_tensor<double>(x.shape(), rng, 0.05, 0.95);
    auto p = random_scan_params<double>(4, dir, rng, 0.45);
    const auto r = random_tensor<double>(x.shape(), rng);
    auto loss = [&] { return inner(scan_forward_gated(x, g, p), r); };
    ScanTape<double> tape;
    scan_forward_gated(x, g, p, &tape);
    const auto grads = scan_backward_gated(r, tape, p);
    EXPECT_LE(max_fd_error(x.values(), grads.grad_x.values(), loss), 1e-4) << to_string(dir);
    EXPECT_LE(max_fd_error(g.values(), grads.grad_g.values(), loss), 1e-4) << to_string(dir);
    EXPECT_LE(max_fd_error(p.omega.values(), grads.grad_omega.values(), loss), 1e-4) << to_string(dir);
    EXPECT_LE(max_fd_error(p.bias, grads.grad_bias, loss), 1e-4) << to_string(dir);
  }
}

TEST(ScanBackward, PlainMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  for (Direction dir : kDirections) {
    auto x = random_tensor<double>(Shape{2, 3, 4, 5}, rng);
    auto p = random_scan_params<double>(3, dir, rng, 0.5);
    const auto r = random_tensor<double>(x.shape(), rng);
    auto loss = [&] { return inner(scan_forward_plain(x, p), r); };
    ScanTape<double> tape;
    scan_forward_plain(x, p, &tape);
    const auto grads = scan_backward(r, tape, p);
    EXPECT_TRUE(grads.grad_g.empty());
    EXPECT_LE(max_fd_error(x.values(), grads.grad_x.values(), loss), 1e-4);
    EXPECT_LE(max_fd_error(p.omega.values(), grads.grad_omega.values(), loss), 1e-4);
    EXPECT_LE(max_fd_error(p.bias, grads.grad_bias, loss), 1e-4);
  }
}

TEST(ScanBackward, TapeIsSingleUse) {
  std::mt19937_64 rng(13);
  const auto x = random_tensor<double>(Shape{1, 2, 2, 2}, rng);
  const auto p = random_scan_params<double>(2, Direction::left_to_right, rng);
  ScanTape<double> tape;
  EXPECT_THROW(scan_backward(x, tape, p), Error);
  scan_forward_plain(x, p, &tape);
  EXPECT_NO_THROW(scan_backward(x, tape, p));
  EXPECT_THROW(scan_backward(x, tape, p), Error);
}

TEST(Srnn, ClosedGateFeaturesReturnInput) {
  std::mt19937_64 rng(14);
  const auto x = random_tensor<double>(Shape{1, 8, 6, 6}, rng);
  const Tensor<double> features(x.shape(), -20.0);
  const auto out = srnn_forward(x, &features, random_srnn_params<double>(8, rng));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(out.data()[i], x.data()[i], 1e-6);
}

TEST(Srnn, MirrorSymmetricInputGivesMirrorSymmetricOutput) {
  std::mt19937_64 rng(15);
  const Shape s{1, 4, 5, 6};
  auto x = random_tensor<double>(s, rng);
  auto f = random_tensor<double>(s, rng, -2, 2);
  for (std::size_t c = 0; c < s.c; ++c)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t xx = 0; xx < s.w / 2; ++xx) {
        x.at(0, c, y, s.w - 1 - xx) = x.at(0, c, y, xx);
        f.at(0, c, y, s.w - 1 - xx) = f.at(0, c, y, xx);
      }
  const auto shared = random_scan_params<double>(4, Direction::left_to_right, rng);
  SrnnParams<double> ps;
  for (std::size_t i = 0; i < 4; ++i) {
    ps[i] = shared;
    ps[i].direction = kDirections[i];
  }
  const auto out = srnn_forward(x, &f, ps);
  for (std::size_t c = 0; c < s.c; ++c)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t xx = 0; xx < s.w; ++xx)
        EXPECT_NEAR(out.at(0, c, y, xx), out.at(0, c, y, s.w - 1 - xx), 1e-5);
}

TEST(Srnn, LayerGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(16);
  auto x = random_tensor<double>(Shape{1, 8, 5, 5}, rng);
  auto f = random_tensor<double>(x.shape(), rng, -2, 2);
  auto ps = random_srnn_params<double>(8, rng, 0.3);
  const auto r = random_tensor<double>(x.shape(), rng);
  auto loss = [&] { return inner(srnn_forward(x, &f, ps), r); };
  SrnnTape<double> tape;
  srnn_forward(x, &f, ps, &tape);
  const auto grads = srnn_backward(r, tape, ps);
  EXPECT_LE(max_fd_error(x.values(), grads.grad_x.values(), loss), 1e-4);
  EXPECT_LE(max_fd_error(f.values(), grads.grad_gate_features.values(), loss), 1e-4);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_LE(max_fd_error(ps[i].omega.values(), grads.grad_omega[i].values(), loss), 1e-4);
    EXPECT_LE(max_fd_error(ps[i].bias, grads.grad_bias[i], loss), 1e-4);
  }
}

TEST(Srnn, BackwardRoutesOnlyThroughWinners) {
  std::mt19937_64 rng(17);
  const auto x = random_tensor<double>(Shape{1, 3, 4, 5}, rng);
  const auto f = random_tensor<double>(x.shape(), rng);
  const auto ps = random_srnn_params<double>(3, rng);
  const auto go = random_tensor<double>(x.shape(), rng);
  SrnnTape<double> tape;
  srnn_forward(x, &f, ps, &tape);
  const auto winner = tape.winner;
  const auto grads = srnn_backward(go, tape, ps);

  const auto gates = logistic(f);
  for (std::size_t i = 0; i < 4; ++i) {
    Tensor<double> masked(x.shape());
    for (std::size_t e = 0; e < x.size(); ++e) {
      if (winner[e] == i) masked.data()[e] = go.data()[e];
    }
    ScanTape<double> st;
    scan_forward_gated(x, gates, ps[i], &st);
    const auto expected = scan_backward_gated(masked, st, ps[i]);
    for (std::size_t k = 0; k < expected.grad_omega.values().size(); ++k) {
      EXPECT_NEAR(grads.grad_omega[i].values()[k], expected.grad_omega.values()[k], 1e-12);
    }
  }
}

TEST(Srnn, ConcurrentDirectionsAreBitIdentical) {
  std::mt19937_64 rng(18);
  const auto x = random_tensor<float>(Shape{2, 8, 16, 12}, rng);
  const auto f = random_tensor<float>(x.shape(), rng);
  const auto ps = random_srnn_params<float>(8, rng, 0.3);
  SrnnTape<float> t1, t4;
  const auto a = srnn_forward(x, &f, ps, &t1, 1);
  const auto b = srnn_forward(x, &f, ps, &t4, 4);
  EXPECT_EQ(a, b);
  const auto go = random_tensor<float>(x.shape(), rng);
  const auto g1 = srnn_backward(go, t1, ps, 1);
  const auto g4 = srnn_backward(go, t4, ps, 4);
  EXPECT_EQ(g1.grad_x, g4.grad_x);
  EXPECT_EQ(g1.grad_gate_features, g4.grad_gate_features);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(g1.grad_omega[i], g4.grad_omega[i]);
}

TEST(Srnn, HorizontalLanesAreIndependent) {
  std::mt19937_64 rng(19);
  const Shape s{1, 3, 6, 7};
  const auto x = random_tensor<double>(s, rng);
  const auto g = random_tensor<double>(s, rng, 0, 1);
  const auto p = random_scan_params<double>(3, Direction::right_to_left, rng);
  std::vector<std::size_t> perm(s.h);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto permute = [&](const Tensor<double>& t) {
    Tensor<double> out(s);
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t xx = 0; xx < s.w; ++xx) out.at(0, c, y, xx) = t.at(0, c, perm[y], xx);
    return out;
  };
  EXPECT_EQ(scan_forward_gated(permute(x), permute(g), p), permute(scan_forward_gated(x, g, p)));
}

TEST(Srnn, LongLanesStayBounded) {
  std::mt19937_64 rng(20);
  const std::size_t d = 8, len = 512;
  for (Direction dir : kDirections) {
    auto p = random_scan_params<float>(d, dir, rng, 2.0);
    p.omega = spectral_norm_project(p.omega, 1.f);
    const Shape s = is_horizontal(dir) ? Shape{1, d, 2, len} : Shape{1, d, len, 2};
    const auto x = random_tensor<float>(s, rng);
    const auto g = random_tensor<float>(s, rng, 0.0, 0.999);
    const auto h = scan_forward_gated(x, g, p);
    ASSERT_TRUE(h.all_finite());
    float bmax = 0;
    for (float b : p.bias) bmax = std::max(bmax, std::abs(b));
    const bool reverse = dir == Direction::right_to_left || dir == Direction::bottom_to_top;
    for (std::size_t lane = 0; lane < 2; ++lane)
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t pos = reverse ? len - 1 - i : i;
        float inf_norm = 0;
        for (std::size_t c = 0; c < d; ++c) {
          const float v = is_horizontal(dir) ? h.at(0, c, lane, pos) : h.at(0, c, pos, lane);
          inf_norm = std::max(inf_norm, std::abs(v));
        }
        EXPECT_LE(inf_norm, float(i + 1) * (1.f + bmax) * std::sqrt(float(d)));
      }
  }
}
