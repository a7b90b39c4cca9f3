#pragma once

#include "dfmsd/nn/autograd.hpp"

namespace dfmsd::nn {

struct ConvGeometry {
  int kernel = 3;
  int stride = 1;
  int padding = 1;

  int out_size(int in) const { return (in + 2 * padding - kernel) / stride + 1; }
};

/// Unfolds a C x (H*W) input into (C*k*k) x (Ho*Wo) patch columns.
Matrix im2col(const Matrix &input, Shape shape, const ConvGeometry &g);
/// Adjoint of im2col.
Matrix col2im(const Matrix &cols, Shape shape, const ConvGeometry &g);

/// weight: Cout x (Cin*k*k); bias: Cout x 1.
Var conv2d(const Var &x, const Var &weight, const Var &bias, const ConvGeometry &g);

Var relu(const Var &x);
Var sigmoid(const Var &x);
Var add(const Var &a, const Var &b);
Var sub(const Var &a, const Var &b);
Var scale(const Var &x, double s);
Var sum(const Var &x);

/// Elementwise product with a constant of the same storage shape.
Var mul_constant(const Var &x, const Matrix &m);

/// Nearest-neighbour upsampling by an integer factor to `target`.
Var upsample_nearest(const Var &x, Shape target);

/// C x (H*W) -> C x 1 spatial mean.
Var global_avg_pool(const Var &x);

/// x: in x 1, weight: out x in, bias: out x 1.
Var linear(const Var &x, const Var &weight, const Var &bias);

/// Multiplies each channel row of x by the matching entry of gate (C x 1).
Var channel_scale(const Var &x, const Var &gate);

/// Sum of squared differences divided by the element count.
Var mse(const Var &a, const Var &b);

/// Global zero-mean / unit-variance standardization (population variance).
/// Constant inputs map to zeros with zero gradient.
Var standardize(const Var &x);
/// Per-channel variant of standardize.
Var standardize_rows(const Var &x);

/**
 * Sigmoid focal loss summed over all entries and divided by `normalizer`.
 * `targets` holds 0/1 per logit.
 */
Var sigmoid_focal_loss(const Var &logits, const Matrix &targets, double alpha, double gamma,
                       double normalizer);

/// Sum of |pred - target| over entries where `weights` is non-zero (weighted),
/// divided by `normalizer`.
Var weighted_l1(const Var &pred, const Matrix &target, const Matrix &weights, double normalizer);

} // namespace dfmsd::nn
