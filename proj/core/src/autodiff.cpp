#include "mantra/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace mantra::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXd>;

ConstMapMat as_matrix(const Node& n) {
  return ConstMapMat(n.value.data(), static_cast<Eigen::Index>(n.shape[0]),
                     static_cast<Eigen::Index>(n.shape[1]));
}

MapMat grad_matrix(Node& n) {
  auto& g = n.ensure_grad();
  return MapMat(g.data(), static_cast<Eigen::Index>(n.shape[0]),
                static_cast<Eigen::Index>(n.shape[1]));
}

thread_local bool t_grad_enabled = true;

// Creates a result node; history is kept only if some parent needs it.
Tensor make_result(Shape shape, std::vector<double> value,
                   std::initializer_list<const Tensor*> parents,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (t_grad_enabled) {
    for (const Tensor* p : parents) {
      if (p->requires_grad()) node->requires_grad = true;
    }
  }
  if (node->requires_grad) {
    for (const Tensor* p : parents) node->parents.push_back(p->node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor::wrap(std::move(node));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(a.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  std::vector<double> out(a.size());
  const auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return make_result(a.shape(), std::move(out), {&a}, [deriv](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * deriv(p.value[i], self.value[i]);
    }
  });
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

std::string to_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return filled(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::filled(Shape shape, double v, bool requires_grad) {
  const auto n = element_count(shape);
  return from(std::move(shape), std::vector<double>(n, v), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
  }
  if (values.size() != element_count(shape)) {
    throw ShapeError("tensor of shape " + to_string(shape) + " needs " +
                     std::to_string(element_count(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return wrap(std::move(node));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({1}, {v}, requires_grad); }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

Tensor Tensor::clone() const { return from(shape(), node_->value, node_->requires_grad); }

void Tensor::backward() const {
  if (size() != 1) {
    throw ShapeError("backward() requires a scalar loss, got shape " + to_string(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  // Interior gradients are per-call; leaves accumulate across calls.
  for (Node* n : order) {
    if (n->backward_fn) n->grad.assign(n->value.size(), 0.0);
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      const double sign = k == 0 ? 1.0 : -1.0;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary(
      a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(
      a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor one_minus(const Tensor& a) {
  return unary(
      a, [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  std::vector<double> out(a.dim(0) * b.dim(1));
  MapMat(out.data(), a.dim(0), b.dim(1)).noalias() = as_matrix(*a.node()) * as_matrix(*b.node());
  return make_result({a.dim(0), b.dim(1)}, std::move(out), {&a, &b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    ConstMapMat dy(self.grad.data(), self.shape[0], self.shape[1]);
    if (pa.requires_grad) grad_matrix(pa).noalias() += dy * as_matrix(pb).transpose();
    if (pb.requires_grad) grad_matrix(pb).noalias() += as_matrix(pa).transpose() * dy;
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  if (x.dim(1) != weight.dim(1)) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                     to_string(weight.shape()));
  }
  if (bias.size() != weight.dim(0)) {
    throw ShapeError("linear: bias " + to_string(bias.shape()) + " does not match weight " +
                     to_string(weight.shape()));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t out_w = weight.dim(0);
  std::vector<double> out(batch * out_w);
  MapMat y(out.data(), batch, out_w);
  y.noalias() = as_matrix(*x.node()) * as_matrix(*weight.node()).transpose();
  y.rowwise() += ConstMapVec(bias.data().data(), out_w).transpose();
  return make_result({batch, out_w}, std::move(out), {&x, &weight, &bias}, [](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node& pb = *self.parents[2];
    ConstMapMat dy(self.grad.data(), self.shape[0], self.shape[1]);
    if (px.requires_grad) grad_matrix(px).noalias() += dy * as_matrix(pw);
    if (pw.requires_grad) grad_matrix(pw).noalias() += dy.transpose() * as_matrix(px);
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      MapVec(g.data(), g.size()) += dy.colwise().sum().transpose();
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts[0].dim(0);
  std::size_t cols = 0;
  bool needs_grad = false;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) {
      throw ShapeError("concat_cols: row count mismatch " + to_string(parts[0].shape()) + " vs " +
                       to_string(p.shape()));
    }
    cols += p.dim(1);
    needs_grad = needs_grad || (t_grad_enabled && p.requires_grad());
  }
  std::vector<double> out(rows * cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto w = p.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(p.data().data() + r * w, w, out.data() + r * cols + offset);
    }
    offset += w;
  }
  auto node = std::make_shared<Node>();
  node->shape = {rows, cols};
  node->value = std::move(out);
  node->requires_grad = needs_grad;
  if (needs_grad) {
    for (const auto& p : parts) node->parents.push_back(p.node());
    node->backward_fn = [](Node& self) {
      const std::size_t rows = self.shape[0];
      const std::size_t cols = self.shape[1];
      std::size_t offset = 0;
      for (auto& p : self.parents) {
        const auto w = p->shape[1];
        if (p->requires_grad) {
          auto& g = p->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < w; ++c) g[r * w + c] += self.grad[r * cols + offset + c];
          }
        }
        offset += w;
      }
    };
  }
  return Tensor::wrap(std::move(node));
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  const Tensor parts[] = {a, b};
  return concat_cols(std::span<const Tensor>(parts));
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  require_rank(a, 2, "slice_cols");
  if (count == 0 || begin + count > a.dim(1)) {
    throw ShapeError("slice_cols: columns [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " + to_string(a.shape()));
  }
  const std::size_t rows = a.dim(0);
  const std::size_t cols = a.dim(1);
  std::vector<double> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().data() + r * cols + begin, count, out.data() + r * count);
  }
  return make_result({rows, count}, std::move(out), {&a}, [begin, count, cols](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t r = 0; r < self.shape[0]; ++r) {
      for (std::size_t c = 0; c < count; ++c) g[r * cols + begin + c] += self.grad[r * count + c];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (element_count(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  return make_result(std::move(shape), a.values(), {&a}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({1}, {s}, {&a}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor mse(const Tensor& prediction, const Tensor& target) {
  require_same_shape(prediction, target, "mse");
  const auto n = static_cast<double>(prediction.size());
  double s = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double d = prediction.data()[i] - target.data()[i];
    s += d * d;
  }
  return make_result({1}, {s / n}, {&prediction, &target}, [n](Node& self) {
    Node& pp = *self.parents[0];
    Node& pt = *self.parents[1];
    const double k = 2.0 * self.grad[0] / n;
    for (std::size_t i = 0; i < pp.value.size(); ++i) {
      const double d = k * (pp.value[i] - pt.value[i]);
      if (pp.requires_grad) pp.ensure_grad()[i] += d;
      if (pt.requires_grad) pt.ensure_grad()[i] -= d;
    }
  });
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  const std::size_t n_batch = input.dim(0), in_c = input.dim(1), in_h = input.dim(2),
                    in_w = input.dim(3);
  const std::size_t out_c = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != in_c || weight.dim(3) != k) {
    throw ShapeError("conv2d: weight " + to_string(weight.shape()) + " incompatible with input " +
                     to_string(input.shape()));
  }
  if (bias.size() != out_c) throw ShapeError("conv2d: bias length must equal output channels");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const auto padded_h = static_cast<long>(in_h + 2 * padding) - static_cast<long>(k);
  const auto padded_w = static_cast<long>(in_w + 2 * padding) - static_cast<long>(k);
  if (padded_h < 0 || padded_w < 0) {
    throw ShapeError("conv2d: non-positive output size for input " + to_string(input.shape()));
  }
  const std::size_t out_h = static_cast<std::size_t>(padded_h) / stride + 1;
  const std::size_t out_w = static_cast<std::size_t>(padded_w) / stride + 1;

  const double* x = input.data().data();
  const double* w = weight.data().data();
  const double* b = bias.data().data();
  std::vector<double> out(n_batch * out_c * out_h * out_w);
  const long pad = static_cast<long>(padding);
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t o = 0; o < out_c; ++o) {
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          double acc = b[o];
          for (std::size_t c = 0; c < in_c; ++c) {
            for (std::size_t ky = 0; ky < k; ++ky) {
              const long iy = static_cast<long>(oy * stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<long>(in_h)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long ix = static_cast<long>(ox * stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<long>(in_w)) continue;
                acc += w[((o * in_c + c) * k + ky) * k + kx] *
                       x[((n * in_c + c) * in_h + static_cast<std::size_t>(iy)) * in_w +
                         static_cast<std::size_t>(ix)];
              }
            }
          }
          out[((n * out_c + o) * out_h + oy) * out_w + ox] = acc;
        }
      }
    }
  }
  return make_result(
      {n_batch, out_c, out_h, out_w}, std::move(out), {&input, &weight, &bias},
      [=](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        Node& pb = *self.parents[2];
        double* gx = px.requires_grad ? px.ensure_grad().data() : nullptr;
        double* gw = pw.requires_grad ? pw.ensure_grad().data() : nullptr;
        double* gb = pb.requires_grad ? pb.ensure_grad().data() : nullptr;
        const double* xv = px.value.data();
        const double* wv = pw.value.data();
        for (std::size_t n = 0; n < n_batch; ++n) {
          for (std::size_t o = 0; o < out_c; ++o) {
            for (std::size_t oy = 0; oy < out_h; ++oy) {
              for (std::size_t ox = 0; ox < out_w; ++ox) {
                const double dy = self.grad[((n * out_c + o) * out_h + oy) * out_w + ox];
                if (dy == 0.0) continue;
                if (gb) gb[o] += dy;
                for (std::size_t c = 0; c < in_c; ++c) {
                  for (std::size_t ky = 0; ky < k; ++ky) {
                    const long iy = static_cast<long>(oy * stride + ky) - pad;
                    if (iy < 0 || iy >= static_cast<long>(in_h)) continue;
                    for (std::size_t kx = 0; kx < k; ++kx) {
                      const long ix = static_cast<long>(ox * stride + kx) - pad;
                      if (ix < 0 || ix >= static_cast<long>(in_w)) continue;
                      const std::size_t wi = ((o * in_c + c) * k + ky) * k + kx;
                      const std::size_t xi =
                          ((n * in_c + c) * in_h + static_cast<std::size_t>(iy)) * in_w +
                          static_cast<std::size_t>(ix);
                      if (gw) gw[wi] += dy * xv[xi];
                      if (gx) gx[xi] += dy * wv[wi];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Tensor batch_norm(const Tensor& input, const Tensor& scale, const Tensor& shift,
                  BatchNormStats& stats, Mode mode) {
  require_rank(input, 4, "batch_norm");
  const std::size_t n_batch = input.dim(0), channels = input.dim(1),
                    plane = input.dim(2) * input.dim(3);
  if (scale.size() != channels || shift.size() != channels) {
    throw ShapeError("batch_norm: scale/shift length must equal channel count " +
                     std::to_string(channels));
  }
  if (stats.running_mean.size() != channels || stats.running_var.size() != channels) {
    throw ShapeError("batch_norm: running statistics do not match channel count");
  }
  const double count = static_cast<double>(n_batch * plane);
  const double* x = input.data().data();
  std::vector<double> out(input.size());
  std::vector<double> normalized(input.size());
  std::vector<double> inv_std(channels);

  for (std::size_t c = 0; c < channels; ++c) {
    double mu = 0.0, var = 0.0;
    if (mode == Mode::kTrain) {
      for (std::size_t n = 0; n < n_batch; ++n) {
        const double* p = x + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) mu += p[i];
      }
      mu /= count;
      for (std::size_t n = 0; n < n_batch; ++n) {
        const double* p = x + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mu) * (p[i] - mu);
      }
      var /= count;
      const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
      stats.running_mean[c] = (1.0 - stats.momentum) * stats.running_mean[c] + stats.momentum * mu;
      stats.running_var[c] =
          (1.0 - stats.momentum) * stats.running_var[c] + stats.momentum * unbiased;
    } else {
      mu = stats.running_mean[c];
      var = stats.running_var[c];
    }
    inv_std[c] = 1.0 / std::sqrt(var + stats.epsilon);
    const double g = scale.data()[c];
    const double b = shift.data()[c];
    for (std::size_t n = 0; n < n_batch; ++n) {
      const std::size_t base = (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (x[base + i] - mu) * inv_std[c];
        normalized[base + i] = xh;
        out[base + i] = g * xh + b;
      }
    }
  }

  const bool train = mode == Mode::kTrain;
  return make_result(
      input.shape(), std::move(out), {&input, &scale, &shift},
      [=, normalized = std::move(normalized), inv_std = std::move(inv_std)](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        for (std::size_t c = 0; c < channels; ++c) {
          double dy_sum = 0.0, dy_xh = 0.0;
          for (std::size_t n = 0; n < n_batch; ++n) {
            const std::size_t base = (n * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              dy_sum += self.grad[base + i];
              dy_xh += self.grad[base + i] * normalized[base + i];
            }
          }
          if (pg.requires_grad) pg.ensure_grad()[c] += dy_xh;
          if (pb.requires_grad) pb.ensure_grad()[c] += dy_sum;
          if (!px.requires_grad) continue;
          auto& gx = px.ensure_grad();
          const double k = pg.value[c] * inv_std[c];
          const double mean_dy = dy_sum / count;
          const double mean_dy_xh = dy_xh / count;
          for (std::size_t n = 0; n < n_batch; ++n) {
            const std::size_t base = (n * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const double dy = self.grad[base + i];
              gx[base + i] += train ? k * (dy - mean_dy - normalized[base + i] * mean_dy_xh)
                                    : k * dy;
            }
          }
        }
      });
}

Tensor bilinear_sample(const Tensor& grid, const Tensor& points) {
  require_rank(grid, 3, "bilinear_sample grid");
  require_rank(points, 2, "bilinear_sample points");
  if (points.dim(1) != 2) throw ShapeError("bilinear_sample: points must be (F, 2)");
  const std::size_t channels = grid.dim(0), height = grid.dim(1), width = grid.dim(2);
  const std::size_t count = points.dim(0);

  struct Corner {
    long row, col;
    double weight, d_col, d_row;  // weight and its partials in column/row
  };
  auto corners = [height, width](double u, double v, Corner out[4]) -> int {
    if (!std::isfinite(u) || !std::isfinite(v)) return 0;
    const double u0 = std::floor(u), v0 = std::floor(v);
    const double fu = u - u0, fv = v - v0;
    const long c0 = static_cast<long>(u0), r0 = static_cast<long>(v0);
    const Corner all[4] = {{r0, c0, (1 - fu) * (1 - fv), -(1 - fv), -(1 - fu)},
                           {r0, c0 + 1, fu * (1 - fv), (1 - fv), -fu},
                           {r0 + 1, c0, (1 - fu) * fv, -fv, (1 - fu)},
                           {r0 + 1, c0 + 1, fu * fv, fv, fu}};
    int m = 0;
    for (const auto& cr : all) {
      if (cr.row >= 0 && cr.col >= 0 && cr.row < static_cast<long>(height) &&
          cr.col < static_cast<long>(width)) {
        out[m++] = cr;
      }
    }
    return m;
  };

  const double* g = grid.data().data();
  const double* pts = points.data().data();
  const std::size_t plane = height * width;
  std::vector<double> out(count * channels, 0.0);
  for (std::size_t f = 0; f < count; ++f) {
    Corner cs[4];
    const int m = corners(pts[2 * f], pts[2 * f + 1], cs);
    for (int j = 0; j < m; ++j) {
      const std::size_t cell = static_cast<std::size_t>(cs[j].row) * width +
                               static_cast<std::size_t>(cs[j].col);
      for (std::size_t c = 0; c < channels; ++c) {
        out[f * channels + c] += cs[j].weight * g[c * plane + cell];
      }
    }
  }
  return make_result({count, channels}, std::move(out), {&grid, &points},
                     [=](Node& self) {
                       Node& pg = *self.parents[0];
                       Node& pp = *self.parents[1];
                       for (std::size_t f = 0; f < count; ++f) {
                         Corner cs[4];
                         const int m = corners(pp.value[2 * f], pp.value[2 * f + 1], cs);
                         for (int j = 0; j < m; ++j) {
                           const std::size_t cell =
                               static_cast<std::size_t>(cs[j].row) * width +
                               static_cast<std::size_t>(cs[j].col);
                           for (std::size_t c = 0; c < channels; ++c) {
                             const double dy = self.grad[f * channels + c];
                             if (pg.requires_grad) {
                               pg.ensure_grad()[c * plane + cell] += dy * cs[j].weight;
                             }
                             if (pp.requires_grad) {
                               const double val = pg.value[c * plane + cell];
                               auto& gp = pp.ensure_grad();
                               gp[2 * f] += dy * cs[j].d_col * val;
                               gp[2 * f + 1] += dy * cs[j].d_row * val;
                             }
                           }
                         }
                       }
                     });
}

}  // namespace mantra::ad
