#include <gtest/gtest.h>

#include <Eigen/SVD>

#include "test_support.hpp"

using namespace svrnn;
using svrnn::testing::random_matrix;
using svrnn::testing::random_tensor;

namespace {

double svd_norm(const Matrix<double>& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) e(r, c) = m(r, c);
  return Eigen::JacobiSVD<Eigen::MatrixXd>(e).singularValues()(0);
}

}  // namespace

TEST(Matvec, IdentityZeroAndDirect) {
  const std::vector<double> v{3, -1};
  EXPECT_EQ(matvec(Matrix<double>::identity(2), std::span<const double>(v)), v);
  EXPECT_EQ(matvec(Matrix<double>(2, 2), std::span<const double>(v)), (std::vector<double>{0, 0}));
  const Matrix<double> w(2, 2, {1, 2, 3, 4});
  const std::vector<double> ones{1, 1};
  EXPECT_EQ(matvec(w, std::span<const double>(ones)), (std::vector<double>{3, 7}));
}

TEST(Matvec, DimensionMismatch) {
  const std::vector<double> v{1, 2, 3};
  EXPECT_THROW(matvec(Matrix<double>::identity(2), std::span<const double>(v)), Error);
}

TEST(ChannelSplit, HalvesSixteenChannels) {
  std::mt19937_64 rng(1);
  const auto t = random_tensor<float>(Shape{1, 16, 4, 4}, rng);
  const auto [a, b] = channel_split(t);
  EXPECT_EQ(a.shape(), (Shape{1, 8, 4, 4}));
  EXPECT_EQ(b.shape(), (Shape{1, 8, 4, 4}));
  EXPECT_EQ(a.at(0, 3, 1, 2), t.at(0, 3, 1, 2));
  EXPECT_EQ(b.at(0, 3, 1, 2), t.at(0, 11, 1, 2));
}

TEST(ChannelSplit, TwoScalars) {
  const Tensor<float> t(Shape{1, 2, 1, 1}, {5.f, -7.f});
  const auto [a, b] = channel_split(t);
  EXPECT_EQ(a.data()[0], 5.f);
  EXPECT_EQ(b.data()[0], -7.f);
}

TEST(ChannelSplit, OddChannelsRejected) {
  EXPECT_THROW(channel_split(Tensor<float>(Shape{1, 3, 2, 2})), Error);
}

TEST(ChannelSplit, ConcatIsBitExactInverse) {
  std::mt19937_64 rng(2);
  for (std::size_t c = 2; c <= 12; c += 2) {
    const auto t = random_tensor<float>(Shape{3, c, 5, 4}, rng);
    const auto [a, b] = channel_split(t);
    EXPECT_EQ(channel_concat(a, b), t);
  }
}

TEST(SpectralNorm, ScalesDownTwoIdentity) {
  Matrix<double> w = Matrix<double>::identity(2);
  for (auto& v : w.values()) v *= 2;
  const auto p = spectral_norm_project(w, 1.0);
  EXPECT_NEAR(p(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(p(1, 1), 1.0, 1e-12);
  EXPECT_EQ(p(0, 1), 0.0);
}

TEST(SpectralNorm, LeavesContractionUnchanged) {
  Matrix<double> w = Matrix<double>::identity(2);
  for (auto& v : w.values()) v *= 0.5;
  EXPECT_EQ(spectral_norm_project(w, 1.0), w);
}

TEST(SpectralNorm, ZeroMatrixPassesThrough) {
  const Matrix<double> z(3, 3);
  EXPECT_EQ(spectral_norm_project(z, 1.0), z);
}

TEST(SpectralNorm, MatchesSvdOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto w = random_matrix<double>(8, 8, rng);
    const double scale = 3.2 / svd_norm(w);
    for (auto& v : w.values()) v *= scale;
    ASSERT_NEAR(svd_norm(w), 3.2, 1e-9);
    const auto p = spectral_norm_project(w, 1.0);
    const double sigma = svd_norm(p);
    EXPECT_GE(sigma, 0.999);
    EXPECT_LE(sigma, 1.001);
  }
}

TEST(SpectralNorm, Idempotent) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto w = random_matrix<double>(8, 8, rng, 2.0);
    const auto once = spectral_norm_project(w, 1.0);
    const auto twice = spectral_norm_project(once, 1.0);
    for (std::size_t i = 0; i < once.values().size(); ++i) {
      EXPECT_NEAR(once.values()[i], twice.values()[i], 1e-6);
    }
  }
}

TEST(SpectralNorm, BoundsAmplification) {
  std::mt19937_64 rng(5);
  auto w = spectral_norm_project(random_matrix<double>(8, 8, rng, 3.0), 1.0);
  std::normal_distribution<double> normal;
  for (int k = 0; k < 100; ++k) {
    std::vector<double> v(8);
    double norm = 0;
    for (auto& e : v) {
      e = normal(rng);
      norm += e * e;
    }
    for (auto& e : v) e /= std::sqrt(norm);
    const auto wv = matvec(w, std::span<const double>(v));
    double out = 0;
    for (double e : wv) out += e * e;
    EXPECT_LE(std::sqrt(out), 1.0 + 1e-5);
  }
}

TEST(Tensor, RejectsLengthMismatchAndReportsNonFinite) {
  EXPECT_THROW(Tensor<float>(Shape{1, 1, 2, 2}, std::vector<float>(3)), Error);
  Tensor<float> t(Shape{1, 1, 1, 2});
  EXPECT_NO_THROW(require_finite(t, "t"));
  t.data()[1] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(require_finite(t, "t"), Error);
}
