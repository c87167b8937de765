#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// tensors of doubles. Every operation records a closure on a tape node;
// Tensor::backward() walks the graph in reverse topological order.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mantra::ad {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  std::vector<double> values() const { return node_->value; }
  double item() const;
  double at(std::size_t i) const { return node_->value.at(i); }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Empty span when no gradient has been accumulated yet.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  // Value copy without history.
  Tensor detach() const;
  // Deep copy including the requires_grad flag, without history.
  Tensor clone() const;

  // Accumulates d(this)/d(leaf) into every reachable leaf that requires
  // gradients. Only valid on single-element tensors.
  void backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  static Tensor wrap(std::shared_ptr<Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<Node> node_;
};

// While alive, operations on the current thread record no history, so
// frozen-model inference builds no tape and touches no shared state.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

// --- elementwise and linear algebra -------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor one_minus(const Tensor& a);

Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);

// (m,k) x (k,n) -> (m,n)
Tensor matmul(const Tensor& a, const Tensor& b);
// x: (batch, in), weight: (out, in), bias: (out) -> (batch, out)
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
Tensor reshape(const Tensor& a, Shape shape);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Mean of squared differences over all elements.
Tensor mse(const Tensor& prediction, const Tensor& target);

// --- convolutional layers ------------------------------------------------

// input: (N, C, H, W); weight: (O, C, k, k); bias: (O).
// Output spatial size is floor((H + 2*padding - k) / stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;
};

enum class Mode { kTrain, kEval };

// input: (N, C, H, W), per-channel scale/shift of length C. Train mode
// normalizes with batch statistics (biased variance) and updates the running
// statistics with the unbiased estimate; eval mode reads running statistics.
Tensor batch_norm(const Tensor& input, const Tensor& scale, const Tensor& shift,
                  BatchNormStats& stats, Mode mode);

// grid: (C, H, W); points: (F, 2) holding (column, row) positions in cell
// units, cell (r, c) centred at (c, r). Zero-padded bilinear interpolation;
// returns (F, C). Differentiable in both grid and points.
Tensor bilinear_sample(const Tensor& grid, const Tensor& points);

}  // namespace mantra::ad
