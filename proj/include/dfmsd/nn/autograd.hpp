#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace dfmsd::nn {

using Matrix = Eigen::MatrixXd;

/// C x H x W extent of a value; storage is always C x (H*W).
struct Shape {
  int channels = 1;
  int height = 1;
  int width = 1;

  int spatial() const { return height * width; }
  bool operator==(const Shape &) const = default;
};

struct Node {
  Matrix value;
  Matrix grad;
  Shape shape;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node &)> backward;

  void accumulate(const Matrix &g) {
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }
};

/**
 * Handle to a value in a dynamically recorded computation graph.
 *
 * Leaves created with `requires_grad` accumulate gradients across calls to
 * backward() until zero_grad(). Interior nodes exist only while some Var
 * refers to them.
 */
class Var {
public:
  Var() = default;

  static Var constant(Matrix value, Shape shape);
  static Var leaf(Matrix value, Shape shape, bool requires_grad);
  static Var scalar(double v) { return constant(Matrix::Constant(1, 1, v), Shape{}); }

  const Matrix &value() const { return node_->value; }
  Matrix &mutable_value() { return node_->value; }
  const Matrix &grad() const { return node_->grad; }
  Shape shape() const { return node_->shape; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  double item() const;

  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad.resize(0, 0); }

  /// Reverse-mode pass from a 1x1 value.
  void backward() const;

  const std::shared_ptr<Node> &node() const { return node_; }

  /// Builds an interior node. When no input requires a gradient the result is
  /// a constant and `backward` is dropped.
  static Var make(Matrix value, Shape shape, std::vector<Var> inputs, std::function<void(Node &)> backward);

private:
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

/// A named trainable tensor.
struct Parameter {
  std::string name;
  Var var;
};

using ParameterList = std::vector<Parameter *>;

} // namespace dfmsd::nn
