#include "dfmsd/nn/modules.hpp"

#include <cmath>
#include <cstring>
#include <random>

namespace dfmsd::nn {

namespace {

Matrix he_normal(Eigen::Index rows, Eigen::Index cols, double fan_in, Rng &rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m(i) = dist(rng);
  return m;
}

} // namespace

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, ConvGeometry g, Rng &rng)
    : geom_(g), in_(in_channels), out_(out_channels) {
  const int fan_in = in_channels * g.kernel * g.kernel;
  weight_ = {name + ".weight",
             Var::leaf(he_normal(out_channels, fan_in, fan_in, rng), Shape{out_channels, 1, fan_in}, true)};
  bias_ = {name + ".bias", Var::leaf(Matrix::Zero(out_channels, 1), Shape{out_channels, 1, 1}, true)};
}

Linear::Linear(std::string name, int in_features, int out_features, Rng &rng) {
  weight_ = {name + ".weight", Var::leaf(he_normal(out_features, in_features, in_features, rng),
                                         Shape{out_features, 1, in_features}, true)};
  bias_ = {name + ".bias", Var::leaf(Matrix::Zero(out_features, 1), Shape{out_features, 1, 1}, true)};
}

SqueezeExcitation::SqueezeExcitation(std::string name, int channels, Rng &rng, int reduction) {
  const int hidden = std::max(1, channels / reduction);
  fc1_ = Linear(name + ".fc1", channels, hidden, rng);
  fc2_ = Linear(name + ".fc2", hidden, channels, rng);
}

Var SqueezeExcitation::operator()(const Var &x) const {
  Var gate = sigmoid(fc2_(relu(fc1_(global_avg_pool(x)))));
  return channel_scale(x, gate);
}

GenerationBlock::GenerationBlock(std::string name, int channels, Rng &rng)
    : se_(name + ".se", channels, rng), conv1_(name + ".conv1", channels, channels, {3, 1, 1}, rng),
      conv2_(name + ".conv2", channels, channels, {3, 1, 1}, rng) {}

Var GenerationBlock::operator()(const Var &x) const { return conv2_(relu(conv1_(se_(x)))); }

Projection::Projection(std::string name, int in_channels, int out_channels, Rng &rng)
    : conv_(name, in_channels, out_channels, {1, 1, 0}, rng) {
  if (in_channels == out_channels)
    conv_.weight().var.mutable_value() = Matrix::Identity(out_channels, in_channels);
}

void zero_grad(const ParameterList &params) {
  for (auto *p : params)
    p->var.zero_grad();
}

void set_requires_grad(const ParameterList &params, bool on) {
  for (auto *p : params)
    p->var.set_requires_grad(on);
}

std::size_t parameter_count(const ParameterList &params) {
  std::size_t n = 0;
  for (auto *p : params)
    n += static_cast<std::size_t>(p->var.value().size());
  return n;
}

std::uint64_t checksum(const ParameterList &params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto *p : params) {
    const auto *bytes = reinterpret_cast<const unsigned char *>(p->var.value().data());
    const std::size_t n = static_cast<std::size_t>(p->var.value().size()) * sizeof(double);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

void Sgd::step(const ParameterList &params, MomentumBuffers &buffers, double grad_scale) const {
  double clip = 1.0;
  if (grad_clip_ > 0.0) {
    double norm2 = 0.0;
    for (auto *p : params)
      if (p->var.grad().size() != 0)
        norm2 += p->var.grad().squaredNorm() * grad_scale * grad_scale;
    const double norm = std::sqrt(norm2);
    if (norm > grad_clip_)
      clip = grad_clip_ / norm;
  }
  for (auto *p : params) {
    Matrix &value = p->var.mutable_value();
    Matrix g = p->var.grad().size() != 0 ? Matrix(p->var.grad() * (grad_scale * clip))
                                         : Matrix(Matrix::Zero(value.rows(), value.cols()));
    g += weight_decay_ * value;
    auto it = buffers.find(p->name);
    if (it == buffers.end())
      it = buffers.emplace(p->name, g).first;
    else
      it->second = momentum_ * it->second + g;
    value -= lr_ * it->second;
  }
}

} // namespace dfmsd::nn
