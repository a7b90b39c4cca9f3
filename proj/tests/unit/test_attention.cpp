#include "dfmsd/attention.hpp"

#include <doctest.h>

#include <random>
#include <set>

using namespace dfmsd;

namespace {

double scalar_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

FeatureMapd random_map(int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  FeatureMapd f(c, h, w);
  for (Eigen::Index i = 0; i < f.data.size(); ++i)
    f.data(i) = n(rng);
  return f;
}

AttentionPair<double> pair_from_spatial(const Eigen::MatrixXd &spatial, int channels) {
  return {Eigen::VectorXd::Constant(channels, 0.5), spatial};
}

} // namespace

TEST_CASE("channel attention examples") {
  FeatureMapd zero(3, 2, 2);
  CHECK((channel_attention(zero, 0.7).array() == 0.5).all());

  FeatureMapd two(2, 3, 3);
  two.data.row(0).setConstant(1.0);
  const Eigen::VectorXd a = channel_attention(two, 1.0);
  CHECK(a(0) == doctest::Approx(scalar_sigmoid(1.0)).epsilon(1e-15));
  CHECK(a(1) == 0.5);

  FeatureMapd constant(4, 2, 3);
  constant.data.setConstant(0.8);
  for (double tau : {0.25, 1.0, 3.0})
    CHECK((channel_attention(constant, tau).array() - scalar_sigmoid(0.8 / tau)).abs().maxCoeff() < 1e-15);
}

TEST_CASE("spatial attention examples") {
  FeatureMapd zero(2, 3, 3);
  CHECK((spatial_attention(zero, 0.5).array() == 0.5).all());

  FeatureMapd one(1, 1, 1);
  one.data(0, 0) = 2.0;
  CHECK(spatial_attention(one, 1.0)(0, 0) == doctest::Approx(scalar_sigmoid(4.0)).epsilon(1e-15));

  FeatureMapd spike(3, 4, 4);
  spike.at(1, 2, 3) = -1.5;
  const Eigen::MatrixXd s = spatial_attention(spike, 0.5);
  Eigen::Index r, c;
  s.maxCoeff(&r, &c);
  CHECK(r == 2);
  CHECK(c == 3);
  CHECK((s.array() < s(2, 3)).count() == 15);
}

TEST_CASE("attention rejects non-positive tau") {
  FeatureMapd f(1, 2, 2);
  CHECK_THROWS_AS(channel_attention(f, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(spatial_attention(f, -1.0), std::invalid_argument);
}

TEST_CASE("attention lies strictly inside (0,1) for moderate inputs") {
  for (int i = 0; i < 20; ++i) {
    FeatureMapd f = random_map(3, 4, 5, i);
    f.data *= 1.5;
    const auto att = dual_attention(f, 1.0);
    CHECK((att.channel.array() > 0).all());
    CHECK((att.channel.array() < 1).all());
    CHECK((att.spatial.array() > 0).all());
    CHECK((att.spatial.array() < 1).all());
    CHECK(att.spatial.rows() == 4);
    CHECK(att.spatial.cols() == 5);
  }
}

TEST_CASE("channel attention is separable and monotone per channel") {
  FeatureMapd f = random_map(4, 3, 3, 11);
  const Eigen::VectorXd before = channel_attention(f, 1.0);
  f.data.row(2).array() += 0.3;
  const Eigen::VectorXd after = channel_attention(f, 1.0);
  CHECK(after(2) > before(2));
  for (int c : {0, 1, 3})
    CHECK(after(c) == before(c));
}

TEST_CASE("spatial attention resamples to a target grid") {
  FeatureMapd f = random_map(2, 4, 4, 5);
  const Eigen::MatrixXd same = spatial_attention(f, 0.5, 4, 4);
  CHECK(same.isApprox(spatial_attention(f, 0.5)));
  const Eigen::MatrixXd up = spatial_attention(f, 0.5, 8, 8);
  CHECK(up.rows() == 8);
  CHECK(up.minCoeff() >= same.minCoeff() - 1e-15);
  CHECK(up.maxCoeff() <= same.maxCoeff() + 1e-15);
}

TEST_CASE("2x2 attention masks the two highest positions") {
  Eigen::MatrixXd s(2, 2);
  s << 0.9, 0.8, 0.2, 0.1;
  const DualMask m = build_masks(pair_from_spatial(s, 2), 0.5, 0);
  CHECK(m.spatial_mask(0, 0) == 0.0);
  CHECK(m.spatial_mask(0, 1) == 0.0);
  CHECK(m.spatial_mask(1, 0) == 1.0);
  CHECK(m.spatial_mask(1, 1) == 1.0);
  CHECK(m.masked_channels() == 1);
}

TEST_CASE("mask cardinality is exact for every ratio") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const int c = 1 + static_cast<int>(rng() % 9), h = 1 + static_cast<int>(rng() % 7), w = 1 + static_cast<int>(rng() % 7);
    const auto att = dual_attention(random_map(c, h, w, trial), 0.5);
    for (int k = 1; k <= 9; ++k) {
      const double rho = k / 10.0;
      const DualMask m = build_masks(att, rho, trial);
      CHECK(m.masked_positions() == static_cast<int>(std::lround(rho * h * w)));
      CHECK(m.masked_channels() == static_cast<int>(std::lround(rho * c)));
    }
  }
}

TEST_CASE("ties are broken reproducibly by seed") {
  const auto att = pair_from_spatial(Eigen::MatrixXd::Constant(6, 6, 0.5), 8);
  const DualMask a = build_masks(att, 0.5, 42), b = build_masks(att, 0.5, 42);
  CHECK(a.spatial_mask == b.spatial_mask);
  CHECK(a.channel_mask == b.channel_mask);
  bool differs = false;
  for (std::uint64_t s = 0; s < 8 && !differs; ++s)
    differs = build_masks(att, 0.5, s).spatial_mask != a.spatial_mask;
  CHECK(differs);
}

TEST_CASE("tiny ratios mask nothing and apply_mask is then the identity") {
  const FeatureMapd f = random_map(3, 2, 2, 1);
  const DualMask m = build_masks(dual_attention(f, 0.5), 0.01, 0);
  CHECK(m.masked_positions() == 0);
  CHECK(m.masked_channels() == 0);
  CHECK(apply_mask(f, m).data == f.data);
  CHECK_THROWS_AS(build_masks(dual_attention(f, 0.5), 1.0, 0), std::invalid_argument);
}

TEST_CASE("apply_mask examples") {
  const FeatureMapd f = random_map(3, 3, 3, 2);
  DualMask m;
  m.spatial_mask = Eigen::MatrixXd::Ones(3, 3);
  m.channel_mask = Eigen::VectorXd::Ones(3);
  CHECK(apply_mask(f, m).data == f.data);

  DualMask zero = m;
  zero.spatial_mask.setZero();
  CHECK(apply_mask(f, zero).data.isZero(0.0));

  DualMask one = m;
  one.spatial_mask(1, 2) = 0.0;
  one.channel_mask(0) = 0.0;
  const FeatureMapd out = apply_mask(f, one);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) {
        const bool masked = c == 0 || (y == 1 && x == 2);
        CHECK(out.at(c, y, x) == (masked ? 0.0 : f.at(c, y, x)));
      }
  CHECK(expand_mask(one).cwiseProduct(f.data) == out.data);

  DualMask wrong = m;
  wrong.channel_mask = Eigen::VectorXd::Ones(2);
  CHECK_THROWS_AS(apply_mask(f, wrong), ShapeError);
}

TEST_CASE("masked sets nest with rho and complementary selections partition the grid") {
  const FeatureMapd f = random_map(2, 5, 4, 9);
  const auto att = dual_attention(f, 0.5);
  AttentionPair<double> flipped{-att.channel, -att.spatial};
  for (double rho : {0.2, 0.3, 0.5}) {
    const DualMask top = build_masks(att, rho, 0);
    const DualMask wider = build_masks(att, rho + 0.1, 0);
    CHECK(((1.0 - top.spatial_mask.array()) <= (1.0 - wider.spatial_mask.array())).all());
    const DualMask bottom = build_masks(flipped, 1.0 - rho, 0);
    CHECK(((1.0 - top.spatial_mask.array()) + (1.0 - bottom.spatial_mask.array()) == 1.0).all());
  }
}

TEST_CASE("attention kernels work in single precision") {
  const FeatureMap<float> f = random_map(3, 2, 2, 4).cast<float>();
  const auto att = dual_attention(f, 0.5f);
  CHECK(att.channel.size() == 3);
  const DualMask m = build_masks(att, 0.5, 0);
  CHECK(m.masked_positions() == 2);
}
