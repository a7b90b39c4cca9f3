#include "dfmsd/nn/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace dfmsd::nn {

namespace {

constexpr double kStdFloor = 1e-12;

void push(Node &self, std::size_t i, const Matrix &g) {
  Node &p = *self.parents[i];
  if (p.requires_grad)
    p.accumulate(g);
}

bool is_pointwise(const ConvGeometry &g) { return g.kernel == 1 && g.stride == 1 && g.padding == 0; }

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double stable_sigmoid(double x) {
  if (x >= 0)
    return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_same(const Var &a, const Var &b, const char *op) {
  if (a.value().rows() != b.value().rows() || a.value().cols() != b.value().cols())
    throw std::invalid_argument(std::string(op) + ": operand shapes differ");
}

} // namespace

Matrix im2col(const Matrix &input, Shape s, const ConvGeometry &g) {
  const int ho = g.out_size(s.height), wo = g.out_size(s.width);
  const int k = g.kernel;
  Matrix cols = Matrix::Zero(static_cast<Eigen::Index>(s.channels) * k * k, ho * wo);
  for (int c = 0; c < s.channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + ky) * k + kx;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= s.height)
            continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            if (ix < 0 || ix >= s.width)
              continue;
            cols(row, oy * wo + ox) = input(c, iy * s.width + ix);
          }
        }
      }
  return cols;
}

Matrix col2im(const Matrix &cols, Shape s, const ConvGeometry &g) {
  const int ho = g.out_size(s.height), wo = g.out_size(s.width);
  const int k = g.kernel;
  Matrix out = Matrix::Zero(s.channels, s.spatial());
  for (int c = 0; c < s.channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + ky) * k + kx;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= s.height)
            continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            if (ix < 0 || ix >= s.width)
              continue;
            out(c, iy * s.width + ix) += cols(row, oy * wo + ox);
          }
        }
      }
  return out;
}

Var conv2d(const Var &x, const Var &weight, const Var &bias, const ConvGeometry &g) {
  const Shape in = x.shape();
  const int k2 = g.kernel * g.kernel;
  if (weight.value().cols() != static_cast<Eigen::Index>(in.channels) * k2)
    throw std::invalid_argument("conv2d: weight does not match input channels");
  const Shape out{static_cast<int>(weight.value().rows()), g.out_size(in.height), g.out_size(in.width)};
  if (out.height < 1 || out.width < 1)
    throw std::invalid_argument("conv2d: output would be empty");

  Matrix cols = is_pointwise(g) ? x.value() : im2col(x.value(), in, g);
  Matrix value = weight.value() * cols;
  value.colwise() += bias.value().col(0);

  const bool need_cols = weight.requires_grad();
  Matrix w = x.requires_grad() ? weight.value() : Matrix();
  return Var::make(std::move(value), out, {x, weight, bias},
                   [cols = need_cols ? std::move(cols) : Matrix(), w = std::move(w), in, g](Node &self) {
                     const Matrix &go = self.grad;
                     if (self.parents[0]->requires_grad) {
                       Matrix dcols = w.transpose() * go;
                       push(self, 0, is_pointwise(g) ? dcols : col2im(dcols, in, g));
                     }
                     if (self.parents[1]->requires_grad)
                       push(self, 1, go * cols.transpose());
                     if (self.parents[2]->requires_grad)
                       push(self, 2, go.rowwise().sum());
                   });
}

Var relu(const Var &x) {
  Matrix value = x.value().cwiseMax(0.0);
  return Var::make(value, x.shape(), {x}, [value](Node &self) {
    push(self, 0, (value.array() > 0.0).select(self.grad, 0.0));
  });
}

Var sigmoid(const Var &x) {
  Matrix value = x.value().unaryExpr([](double v) { return stable_sigmoid(v); });
  return Var::make(value, x.shape(), {x}, [value](Node &self) {
    push(self, 0, (self.grad.array() * value.array() * (1.0 - value.array())).matrix());
  });
}

Var add(const Var &a, const Var &b) {
  require_same(a, b, "add");
  return Var::make(a.value() + b.value(), a.shape(), {a, b}, [](Node &self) {
    push(self, 0, self.grad);
    push(self, 1, self.grad);
  });
}

Var sub(const Var &a, const Var &b) {
  require_same(a, b, "sub");
  return Var::make(a.value() - b.value(), a.shape(), {a, b}, [](Node &self) {
    push(self, 0, self.grad);
    push(self, 1, -self.grad);
  });
}

Var scale(const Var &x, double s) {
  return Var::make(x.value() * s, x.shape(), {x}, [s](Node &self) { push(self, 0, self.grad * s); });
}

Var sum(const Var &x) {
  const Eigen::Index r = x.value().rows(), c = x.value().cols();
  return Var::make(Matrix::Constant(1, 1, x.value().sum()), Shape{}, {x}, [r, c](Node &self) {
    push(self, 0, Matrix::Constant(r, c, self.grad(0, 0)));
  });
}

Var mul_constant(const Var &x, const Matrix &m) {
  if (m.rows() != x.value().rows() || m.cols() != x.value().cols())
    throw std::invalid_argument("mul_constant: shape mismatch");
  return Var::make(x.value().cwiseProduct(m), x.shape(), {x},
                   [m](Node &self) { push(self, 0, self.grad.cwiseProduct(m)); });
}

Var upsample_nearest(const Var &x, Shape target) {
  const Shape in = x.shape();
  if (target.channels != in.channels || target.height % in.height != 0 || target.width % in.width != 0)
    throw std::invalid_argument("upsample_nearest: target must be an integer multiple");
  const int fy = target.height / in.height, fx = target.width / in.width;
  Matrix value(in.channels, target.spatial());
  for (int y = 0; y < target.height; ++y)
    for (int xx = 0; xx < target.width; ++xx)
      value.col(y * target.width + xx) = x.value().col((y / fy) * in.width + xx / fx);
  return Var::make(std::move(value), target, {x}, [in, target, fy, fx](Node &self) {
    Matrix g = Matrix::Zero(in.channels, in.spatial());
    for (int y = 0; y < target.height; ++y)
      for (int xx = 0; xx < target.width; ++xx)
        g.col((y / fy) * in.width + xx / fx) += self.grad.col(y * target.width + xx);
    push(self, 0, g);
  });
}

Var global_avg_pool(const Var &x) {
  const Shape in = x.shape();
  const double n = in.spatial();
  return Var::make(x.value().rowwise().mean(), Shape{in.channels, 1, 1}, {x}, [in, n](Node &self) {
    push(self, 0, (self.grad / n).replicate(1, in.spatial()));
  });
}

Var linear(const Var &x, const Var &weight, const Var &bias) {
  if (weight.value().cols() != x.value().rows() || x.value().cols() != 1)
    throw std::invalid_argument("linear: shape mismatch");
  Matrix value = weight.value() * x.value() + bias.value();
  const int out = static_cast<int>(value.rows());
  Matrix xv = x.value(), wv = weight.value();
  return Var::make(std::move(value), Shape{out, 1, 1}, {x, weight, bias}, [xv, wv](Node &self) {
    push(self, 0, wv.transpose() * self.grad);
    push(self, 1, self.grad * xv.transpose());
    push(self, 2, self.grad);
  });
}

Var channel_scale(const Var &x, const Var &gate) {
  if (gate.value().rows() != x.value().rows() || gate.value().cols() != 1)
    throw std::invalid_argument("channel_scale: gate must be C x 1");
  Matrix xv = x.value();
  Eigen::VectorXd gv = gate.value().col(0);
  Matrix value = gv.asDiagonal() * xv;
  return Var::make(std::move(value), x.shape(), {x, gate}, [xv, gv](Node &self) {
    push(self, 0, gv.asDiagonal() * self.grad);
    push(self, 1, self.grad.cwiseProduct(xv).rowwise().sum());
  });
}

Var mse(const Var &a, const Var &b) {
  require_same(a, b, "mse");
  Matrix diff = a.value() - b.value();
  const double n = static_cast<double>(diff.size());
  const double v = diff.squaredNorm() / n;
  return Var::make(Matrix::Constant(1, 1, v), Shape{}, {a, b}, [diff, n](Node &self) {
    const Matrix g = diff * (2.0 * self.grad(0, 0) / n);
    push(self, 0, g);
    push(self, 1, -g);
  });
}

namespace {

/// Standardizes each block (the whole matrix, or each row) and returns the
/// backward closure operands.
struct StdResult {
  Matrix y;
  Eigen::VectorXd inv_sd; ///< 0 for constant blocks
};

StdResult standardize_blocks(const Matrix &x, bool rows) {
  StdResult r{x, Eigen::VectorXd::Zero(rows ? x.rows() : 1)};
  auto apply = [](auto &&block, double &inv_sd) {
    if (block.maxCoeff() == block.minCoeff()) {
      block.setZero();
      inv_sd = 0.0;
      return;
    }
    const double mu = block.mean();
    block.array() -= mu;
    const double sd = std::sqrt(block.squaredNorm() / static_cast<double>(block.size()));
    inv_sd = 1.0 / std::max(sd, kStdFloor);
    block *= inv_sd;
  };
  if (rows)
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      apply(r.y.row(i), r.inv_sd(i));
  else
    apply(r.y.reshaped(), r.inv_sd(0));
  return r;
}

Matrix standardize_backward(const Matrix &g, const StdResult &r, bool rows) {
  Matrix dx(g.rows(), g.cols());
  auto apply = [](const auto &gb, const auto &yb, double inv_sd, auto &&out) {
    const double n = static_cast<double>(gb.size());
    const double mg = gb.sum() / n;
    const double mgy = gb.cwiseProduct(yb).sum() / n;
    out = (gb.array() - mg - yb.array() * mgy) * inv_sd;
  };
  if (rows)
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      apply(g.row(i), r.y.row(i), r.inv_sd(i), dx.row(i));
  else
    apply(g.reshaped(), r.y.reshaped(), r.inv_sd(0), dx.reshaped());
  return dx;
}

} // namespace

Var standardize(const Var &x) {
  StdResult r = standardize_blocks(x.value(), false);
  Matrix y = r.y;
  return Var::make(std::move(y), x.shape(), {x},
                   [r = std::move(r)](Node &self) { push(self, 0, standardize_backward(self.grad, r, false)); });
}

Var standardize_rows(const Var &x) {
  StdResult r = standardize_blocks(x.value(), true);
  Matrix y = r.y;
  return Var::make(std::move(y), x.shape(), {x},
                   [r = std::move(r)](Node &self) { push(self, 0, standardize_backward(self.grad, r, true)); });
}

Var sigmoid_focal_loss(const Var &logits, const Matrix &targets, double alpha, double gamma,
                       double normalizer) {
  const Matrix &x = logits.value();
  if (targets.rows() != x.rows() || targets.cols() != x.cols())
    throw std::invalid_argument("sigmoid_focal_loss: target shape mismatch");
  Matrix dx(x.rows(), x.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x(i);
    const double p = stable_sigmoid(v);
    if (targets(i) > 0.5) {
      const double log_p = -softplus(-v);
      const double q = std::pow(1.0 - p, gamma);
      total += alpha * q * (-log_p);
      dx(i) = alpha * q * (gamma * p * log_p - (1.0 - p));
    } else {
      const double log_1mp = -softplus(v);
      const double q = std::pow(p, gamma);
      total += (1.0 - alpha) * q * (-log_1mp);
      dx(i) = (1.0 - alpha) * q * (-gamma * (1.0 - p) * log_1mp + p);
    }
  }
  dx /= normalizer;
  return Var::make(Matrix::Constant(1, 1, total / normalizer), Shape{}, {logits},
                   [dx = std::move(dx)](Node &self) { push(self, 0, dx * self.grad(0, 0)); });
}

Var weighted_l1(const Var &pred, const Matrix &target, const Matrix &weights, double normalizer) {
  const Matrix &p = pred.value();
  if (target.rows() != p.rows() || target.cols() != p.cols() || weights.rows() != p.rows() ||
      weights.cols() != p.cols())
    throw std::invalid_argument("weighted_l1: shape mismatch");
  const Matrix diff = p - target;
  const double v = diff.cwiseAbs().cwiseProduct(weights).sum() / normalizer;
  Matrix dx = diff.unaryExpr([](double d) { return d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0); })
                  .cwiseProduct(weights) /
              normalizer;
  return Var::make(Matrix::Constant(1, 1, v), Shape{}, {pred},
                   [dx = std::move(dx)](Node &self) { push(self, 0, dx * self.grad(0, 0)); });
}

} // namespace dfmsd::nn
