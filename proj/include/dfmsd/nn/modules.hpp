#pragma once

#include "dfmsd/nn/ops.hpp"
#include "dfmsd/random.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dfmsd::nn {

class Conv2d {
public:
  Conv2d() = default;
  /// He-normal weights, zero bias.
  Conv2d(std::string name, int in_channels, int out_channels, ConvGeometry g, Rng &rng);

  Var operator()(const Var &x) const { return conv2d(x, weight_.var, bias_.var, geom_); }

  void collect(ParameterList &out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }
  Parameter &weight() { return weight_; }
  Parameter &bias() { return bias_; }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

private:
  Parameter weight_, bias_;
  ConvGeometry geom_;
  int in_ = 0, out_ = 0;
};

class Linear {
public:
  Linear() = default;
  Linear(std::string name, int in_features, int out_features, Rng &rng);

  Var operator()(const Var &x) const { return linear(x, weight_.var, bias_.var); }
  void collect(ParameterList &out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

private:
  Parameter weight_, bias_;
};

/**
 * Channel recalibration: global average pool, bottleneck MLP (reduction 4,
 * ReLU), per-channel sigmoid gate.
 */
class SqueezeExcitation {
public:
  SqueezeExcitation() = default;
  SqueezeExcitation(std::string name, int channels, Rng &rng, int reduction = 4);

  Var operator()(const Var &x) const;
  void collect(ParameterList &out) {
    fc1_.collect(out);
    fc2_.collect(out);
  }

private:
  Linear fc1_, fc2_;
};

/**
 * Regenerates masked features: squeeze-excitation followed by
 * conv3x3 -> ReLU -> conv3x3, same padding, channel count preserved.
 */
class GenerationBlock {
public:
  GenerationBlock() = default;
  GenerationBlock(std::string name, int channels, Rng &rng);

  Var operator()(const Var &x) const;
  void collect(ParameterList &out) {
    se_.collect(out);
    conv1_.collect(out);
    conv2_.collect(out);
  }
  int channels() const { return conv1_.in_channels(); }

private:
  SqueezeExcitation se_;
  Conv2d conv1_, conv2_;
};

/// 1x1 convolution mapping student channels to teacher channels. Identity
/// initialized when the counts match.
class Projection {
public:
  Projection() = default;
  Projection(std::string name, int in_channels, int out_channels, Rng &rng);

  Var operator()(const Var &x) const { return conv_(x); }
  void collect(ParameterList &out) { conv_.collect(out); }
  int in_channels() const { return conv_.in_channels(); }
  int out_channels() const { return conv_.out_channels(); }

private:
  Conv2d conv_;
};

void zero_grad(const ParameterList &params);
void set_requires_grad(const ParameterList &params, bool on);
std::size_t parameter_count(const ParameterList &params);

/// FNV-1a over the raw bytes of every parameter value, in list order.
std::uint64_t checksum(const ParameterList &params);

/// SGD with momentum and L2 weight decay, optional global-norm clipping:
///   g <- clip(grad) + wd * p;  buf <- momentum * buf + g;  p <- p - lr * buf
/// Momentum buffers live outside the optimizer, keyed by parameter name.
using MomentumBuffers = std::map<std::string, Matrix>;

class Sgd {
public:
  Sgd(double learning_rate, double momentum, double weight_decay, double grad_clip = 0.0)
      : lr_(learning_rate), momentum_(momentum), weight_decay_(weight_decay), grad_clip_(grad_clip) {}

  /// Applies one update using the accumulated gradients scaled by `grad_scale`.
  void step(const ParameterList &params, MomentumBuffers &buffers, double grad_scale = 1.0) const;

private:
  double lr_, momentum_, weight_decay_, grad_clip_;
};

} // namespace dfmsd::nn
