#include "dfmsd/masking.hpp"
#include "dfmsd/nn/modules.hpp"

#include "gradcheck.hpp"

#include <doctest.h>

#include <random>

using namespace dfmsd;
using dfmsd::nn::Matrix;
using dfmsd::nn::Shape;
using dfmsd::nn::Var;
using dfmsd::testing::gradcheck;

namespace {

constexpr double kStep = 1e-3;
constexpr double kTol = 1e-4;

Matrix randn(int rows, int cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m(i) = n(rng);
  return m;
}

Var input(Shape s, std::uint64_t seed, double scale = 1.0) {
  return Var::leaf(randn(s.channels, s.spatial(), seed, scale), s, true);
}

std::vector<Var> vars_of(const nn::ParameterList &params) {
  std::vector<Var> out;
  for (auto *p : params)
    out.push_back(p->var);
  return out;
}

/// Direct convolution used as an oracle for the im2col path.
Matrix direct_conv(const Matrix &x, Shape s, const Matrix &w, const Matrix &b, nn::ConvGeometry g) {
  const int ho = g.out_size(s.height), wo = g.out_size(s.width);
  Matrix out(w.rows(), ho * wo);
  for (int o = 0; o < w.rows(); ++o)
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx) {
        double acc = b(o, 0);
        for (int c = 0; c < s.channels; ++c)
          for (int ky = 0; ky < g.kernel; ++ky)
            for (int kx = 0; kx < g.kernel; ++kx) {
              const int iy = y * g.stride - g.padding + ky, ix = xx * g.stride - g.padding + kx;
              if (iy < 0 || ix < 0 || iy >= s.height || ix >= s.width)
                continue;
              acc += w(o, (c * g.kernel + ky) * g.kernel + kx) * x(c, iy * s.width + ix);
            }
        out(o, y * wo + xx) = acc;
      }
  return out;
}

} // namespace

TEST_CASE("conv2d matches a direct convolution") {
  const Shape s{3, 5, 6};
  const Matrix x = randn(3, 30, 1);
  for (nn::ConvGeometry g : {nn::ConvGeometry{3, 1, 1}, nn::ConvGeometry{3, 2, 1}, nn::ConvGeometry{1, 1, 0}}) {
    const Matrix w = randn(4, 3 * g.kernel * g.kernel, 2), b = randn(4, 1, 3);
    const Var out = nn::conv2d(Var::constant(x, s), Var::constant(w, {4, 1, 3 * g.kernel * g.kernel}),
                               Var::constant(b, {4, 1, 1}), g);
    CHECK(out.shape() == Shape{4, g.out_size(5), g.out_size(6)});
    CHECK((out.value() - direct_conv(x, s, w, b, g)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("col2im is the adjoint of im2col") {
  const Shape s{2, 5, 4};
  const nn::ConvGeometry g{3, 2, 1};
  const Matrix x = randn(2, 20, 4);
  const Matrix cols = nn::im2col(x, s, g);
  const Matrix y = randn(static_cast<int>(cols.rows()), static_cast<int>(cols.cols()), 5);
  CHECK((cols.cwiseProduct(y)).sum() == doctest::Approx(x.cwiseProduct(nn::col2im(y, s, g)).sum()).epsilon(1e-12));
}

TEST_CASE("elementwise and shape ops pass gradient checks") {
  const Shape s{2, 4, 4};
  Var a = input(s, 10), b = input(s, 11);
  const Matrix w = randn(2, 16, 12);
  auto weighted = [&](const Var &v) { return nn::sum(nn::mul_constant(v, w)); };

  CHECK(gradcheck([&] { return weighted(nn::relu(a)); }, {a}, kStep).rel_error < kTol);
  CHECK(gradcheck([&] { return weighted(nn::sigmoid(a)); }, {a}, kStep).rel_error < kTol);
  CHECK(gradcheck([&] { return weighted(nn::add(a, nn::scale(b, -0.7))); }, {a, b}, kStep).rel_error < kTol);
  CHECK(gradcheck([&] { return weighted(nn::sub(a, b)); }, {a, b}, kStep).rel_error < kTol);

  Var small = input({2, 2, 2}, 13);
  CHECK(gradcheck([&] { return weighted(nn::upsample_nearest(small, s)); }, {small}, kStep).rel_error < kTol);
  CHECK(gradcheck([&] { return nn::sum(nn::mul_constant(nn::global_avg_pool(a), randn(2, 1, 14))); }, {a}, kStep)
            .rel_error < kTol);

  Var gate = input({2, 1, 1}, 15);
  CHECK(gradcheck([&] { return weighted(nn::channel_scale(a, gate)); }, {a, gate}, kStep).rel_error < kTol);

  Var vec = input({5, 1, 1}, 16), lw = input({3, 1, 5}, 17), lb = input({3, 1, 1}, 18);
  CHECK(gradcheck([&] { return nn::sum(nn::sigmoid(nn::linear(vec, lw, lb))); }, {vec, lw, lb}, kStep).rel_error <
        kTol);
}

TEST_CASE("convolution gradients") {
  for (nn::ConvGeometry g : {nn::ConvGeometry{3, 1, 1}, nn::ConvGeometry{3, 2, 1}, nn::ConvGeometry{1, 1, 0}}) {
    Var x = input({2, 4, 4}, 20);
    Var w = input({3, 1, 2 * g.kernel * g.kernel}, 21), b = input({3, 1, 1}, 22);
    const Shape os{3, g.out_size(4), g.out_size(4)};
    const Matrix proj = randn(3, os.spatial(), 23);
    CHECK(gradcheck([&] { return nn::sum(nn::mul_constant(nn::conv2d(x, w, b, g), proj)); }, {x, w, b}, kStep)
              .rel_error < kTol);
  }
}

TEST_CASE("loss ops pass gradient checks") {
  Var a = input({2, 4, 4}, 30), b = input({2, 4, 4}, 31);
  CHECK(gradcheck([&] { return nn::mse(a, b); }, {a, b}, kStep).rel_error < kTol);
  const Matrix w = randn(2, 16, 32);
  CHECK(gradcheck([&] { return nn::sum(nn::mul_constant(nn::standardize(a), w)); }, {a}, kStep).rel_error < kTol);
  CHECK(gradcheck([&] { return nn::sum(nn::mul_constant(nn::standardize_rows(a), w)); }, {a}, kStep).rel_error <
        kTol);
  CHECK(gradcheck([&] { return nn::mse(nn::standardize(a), nn::standardize(b)); }, {a, b}, kStep).rel_error < kTol);

  Matrix targets = Matrix::Zero(2, 16);
  targets(0, 3) = targets(1, 9) = 1.0;
  CHECK(gradcheck([&] { return nn::sigmoid_focal_loss(a, targets, 0.25, 2.0, 2.0); }, {a}, kStep).rel_error < kTol);

  Matrix weights = Matrix::Zero(2, 16);
  weights.col(5).setOnes();
  weights.col(11).setOnes();
  const Matrix target = randn(2, 16, 33);
  CHECK(gradcheck([&] { return nn::weighted_l1(a, target, weights, 2.0); }, {a}, kStep).rel_error < kTol);
}

TEST_CASE("standardize handles constant input") {
  Var c = Var::leaf(Matrix::Constant(2, 4, 1.5), {2, 2, 2}, true);
  const Var z = nn::standardize(c);
  CHECK(z.value().isZero(0.0));
  nn::sum(nn::mul_constant(z, randn(2, 4, 1))).backward();
  CHECK((c.grad().size() == 0 || c.grad().isZero(0.0)));
}

TEST_CASE("focal loss value matches a scalar evaluation") {
  const Matrix logits = (Matrix(1, 2) << 0.3, -1.2).finished();
  const Matrix targets = (Matrix(1, 2) << 1.0, 0.0).finished();
  const double p0 = 1 / (1 + std::exp(-0.3)), p1 = 1 / (1 + std::exp(1.2));
  const double expected = -0.25 * std::pow(1 - p0, 2) * std::log(p0) - 0.75 * std::pow(p1, 2) * std::log(1 - p1);
  CHECK(nn::sigmoid_focal_loss(Var::constant(logits, {1, 1, 2}), targets, 0.25, 2.0, 1.0).item() ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("generation block keeps shape and has correct gradients") {
  Rng rng(1);
  nn::GenerationBlock gen("gen", 2, rng);
  Var x = input({2, 4, 4}, 40);
  const Var y = gen(x);
  CHECK(y.shape() == x.shape());

  nn::ParameterList params;
  gen.collect(params);
  CHECK(nn::parameter_count(params) < 1000);
  const Matrix w = randn(2, 16, 41);
  std::vector<Var> leaves = vars_of(params);
  leaves.push_back(x);
  CHECK(gradcheck([&] { return nn::sum(nn::mul_constant(gen(x), w)); }, leaves, kStep).rel_error < kTol);

  const FeatureMapd zero(2, 3, 3);
  const FeatureMapd out = reconstruct(gen, zero);
  CHECK(out.same_shape(zero));
  CHECK(out.all_finite());
}

TEST_CASE("projection is the identity for equal widths and maps channel counts otherwise") {
  Rng rng(2);
  nn::Projection same("phi", 3, 3, rng);
  FeatureMapd f(randn(3, 4, 50), 3, 2, 2);
  CHECK(projection_phi(same, f).data == f.data);

  nn::Projection wide("phi", 4, 8, rng);
  const FeatureMapd g(randn(4, 4, 51), 4, 2, 2);
  const FeatureMapd out = projection_phi(wide, g);
  CHECK(out.channels == 8);
  CHECK(out.height == 2);
  CHECK(out.width == 2);

  nn::ParameterList params;
  wide.collect(params);
  Var x = to_var(g, true);
  std::vector<Var> leaves = vars_of(params);
  leaves.push_back(x);
  const Matrix w = randn(8, 4, 52);
  CHECK(gradcheck([&] { return nn::sum(nn::mul_constant(wide(x), w)); }, leaves, kStep).rel_error < kTol);
}

TEST_CASE("masked reconstruction loss gradients reach student features and adapters") {
  const int levels = 2;
  MaskedReconstructor adapters(levels, 2, 3, 7);
  // fresh zero biases put fully masked positions exactly on a ReLU kink
  std::uint64_t seed = 100;
  for (auto *p : adapters.parameters())
    p->var.mutable_value() += randn(static_cast<int>(p->var.value().rows()),
                                    static_cast<int>(p->var.value().cols()), seed++, 0.1);
  std::vector<Var> students = {input({2, 4, 4}, 60), input({2, 2, 2}, 61)};
  std::vector<FeatureMapd> teachers = {FeatureMapd(randn(3, 16, 62), 3, 4, 4, 0),
                                       FeatureMapd(randn(3, 4, 63), 3, 2, 2, 1)};
  std::vector<DualMask> masks;
  for (int l = 0; l < levels; ++l)
    masks.push_back(build_masks(dual_attention(teachers[l], 0.5), 0.5, l));

  auto loss = [&] {
    Var total;
    for (int l = 0; l < levels; ++l) {
      Var err = nn::mse(to_var(teachers[l]), adapters.reconstruct(l, adapters.project(l, students[l]), masks[l]));
      total = l == 0 ? err : nn::add(total, err);
    }
    return total;
  };
  std::vector<Var> leaves = vars_of(adapters.parameters());
  CHECK(nn::parameter_count(adapters.parameters()) < 1000);
  leaves.insert(leaves.end(), students.begin(), students.end());
  CHECK(gradcheck(loss, leaves, kStep).rel_error < kTol);
  CHECK(gradcheck(loss, students, kStep).rel_error < kTol);
}

TEST_CASE("distillation, enhancement and total objectives pass gradient checks") {
  Rng rng(3);
  nn::Projection phi("phi", 2, 3, rng);
  Var s = input({2, 4, 4}, 70), s_enh = input({2, 4, 4}, 71);
  const Var t = Var::constant(randn(3, 16, 72), {3, 4, 4});
  const Var t_enh = Var::constant(randn(3, 16, 73), {3, 4, 4});
  const Matrix keep = expand_mask(build_masks(dual_attention(to_feature(t_enh), 0.5), 0.5, 1));
  Var gt_pred = input({2, 4, 4}, 74);
  const Matrix gt_target = randn(2, 16, 75);

  auto feature_loss = [&] { return nn::mse(t, phi(s)); };
  auto me = [&] { return nn::mse(t_enh, nn::mul_constant(phi(s_enh), keep)); };
  auto sfa = [&] { return nn::mse(nn::standardize(t), nn::standardize(phi(s))); };
  auto total = [&] {
    const double alpha = 0.7, beta = 0.4;
    Var distill = nn::add(nn::add(feature_loss(), nn::scale(me(), beta)), sfa());
    return nn::add(nn::mse(gt_pred, Var::constant(gt_target, {2, 4, 4})), nn::scale(distill, alpha));
  };

  nn::ParameterList params;
  phi.collect(params);
  std::vector<Var> leaves = vars_of(params);
  leaves.insert(leaves.end(), {s, s_enh, gt_pred});
  CHECK(gradcheck(feature_loss, {s}, kStep).rel_error < kTol);
  CHECK(gradcheck(me, {s_enh}, kStep).rel_error < kTol);
  CHECK(gradcheck(sfa, {s}, kStep).rel_error < kTol);
  CHECK(gradcheck(total, leaves, kStep).rel_error < kTol);
}

TEST_CASE("leaves accumulate gradients until zeroed") {
  Var a = input({1, 1, 3}, 80);
  nn::sum(a).backward();
  nn::sum(a).backward();
  CHECK(a.grad().isApprox(Matrix::Constant(1, 3, 2.0)));
  a.zero_grad();
  CHECK(a.grad().size() == 0);
  CHECK_THROWS_AS(a.backward(), std::logic_error);
}

TEST_CASE("sgd applies momentum, weight decay and clipping") {
  nn::Parameter p{"w", Var::leaf(Matrix::Constant(1, 1, 1.0), {}, true)};
  nn::ParameterList params{&p};
  nn::MomentumBuffers buffers;
  const nn::Sgd sgd(0.1, 0.9, 0.01);

  nn::sum(nn::scale(p.var, 2.0)).backward();
  sgd.step(params, buffers);
  // g = 2 + 0.01*1, buf = g, w = 1 - 0.1*2.01
  CHECK(p.var.value()(0, 0) == doctest::Approx(1.0 - 0.201).epsilon(1e-15));
  nn::zero_grad(params);
  nn::sum(nn::scale(p.var, 2.0)).backward();
  const double w1 = p.var.value()(0, 0);
  const double buf = 0.9 * 2.01 + (2.0 + 0.01 * w1);
  sgd.step(params, buffers);
  CHECK(p.var.value()(0, 0) == doctest::Approx(w1 - 0.1 * buf).epsilon(1e-15));

  nn::Parameter q{"q", Var::leaf(Matrix::Constant(1, 1, 0.0), {}, true)};
  nn::MomentumBuffers qb;
  nn::sum(nn::scale(q.var, 100.0)).backward();
  nn::Sgd(1.0, 0.0, 0.0, 5.0).step({&q}, qb);
  CHECK(q.var.value()(0, 0) == doctest::Approx(-5.0));
}

TEST_CASE("checksums track parameter bytes") {
  Rng a(9), b(9);
  nn::GenerationBlock g1("g", 4, a), g2("g", 4, b);
  nn::ParameterList p1, p2;
  g1.collect(p1);
  g2.collect(p2);
  CHECK(nn::checksum(p1) == nn::checksum(p2));
  p2.front()->var.mutable_value()(0, 0) += 1e-12;
  CHECK(nn::checksum(p1) != nn::checksum(p2));
}
