#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mantra/autodiff.hpp"

namespace mantra {

using Rng = std::mt19937_64;

// Derives an independent stream seed from a base seed and a stream name so
// that every consumer of randomness is addressed by name.
std::uint64_t sub_seed(std::uint64_t seed, std::string_view name);

struct NamedTensor {
  std::string name;
  ad::Tensor tensor;
};
using ParameterList = std::vector<NamedTensor>;

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
ad::Tensor uniform_init(ad::Shape shape, std::size_t fan_in, Rng& rng);

struct Dense {
  ad::Tensor weight;  // (out, in)
  ad::Tensor bias;    // (out)

  static Dense create(std::size_t in, std::size_t out, Rng& rng);
  static Dense zeros(std::size_t in, std::size_t out);
  std::size_t in_width() const { return weight.dim(1); }
  std::size_t out_width() const { return weight.dim(0); }
  ad::Tensor operator()(const ad::Tensor& x) const { return ad::linear(x, weight, bias); }
  void append_parameters(const std::string& prefix, ParameterList& out) const;
};

// Gated recurrent unit. Every gate weight has shape
// (hidden_width, input_width + hidden_width) and acts on [x; h].
struct GruParams {
  std::size_t input_width = 0;
  std::size_t hidden_width = 0;
  ad::Tensor w_update, b_update;
  ad::Tensor w_reset, b_reset;
  ad::Tensor w_candidate, b_candidate;

  static GruParams create(std::size_t input_width, std::size_t hidden_width, Rng& rng);
  static GruParams zeros(std::size_t input_width, std::size_t hidden_width);
  void append_parameters(const std::string& prefix, ParameterList& out) const;
};

// x: (batch, input_width), h: (batch, hidden_width) -> (batch, hidden_width)
//   z  = sigmoid(W_z [x; h] + b_z)
//   r  = sigmoid(W_r [x; h] + b_r)
//   n  = tanh(W_n [x; r*h] + b_n)
//   h' = z*h + (1 - z)*n
ad::Tensor gru_step(const ad::Tensor& x, const ad::Tensor& h, const GruParams& p);

struct Conv2dLayer {
  ad::Tensor weight;  // (out, in, k, k)
  ad::Tensor bias;    // (out)
  std::size_t stride = 1;
  std::size_t padding = 0;

  static Conv2dLayer create(std::size_t in, std::size_t out, std::size_t kernel,
                            std::size_t stride, std::size_t padding, Rng& rng);
  ad::Tensor operator()(const ad::Tensor& x) const {
    return ad::conv2d(x, weight, bias, stride, padding);
  }
  void append_parameters(const std::string& prefix, ParameterList& out) const;
};

struct BatchNorm2d {
  ad::Tensor scale;  // (C), starts at 1
  ad::Tensor shift;  // (C), starts at 0
  ad::BatchNormStats stats;

  static BatchNorm2d create(std::size_t channels);
  ad::Tensor operator()(const ad::Tensor& x, ad::Mode mode) {
    return ad::batch_norm(x, scale, shift, stats, mode);
  }
  void append_parameters(const std::string& prefix, ParameterList& out) const;
  // Running statistics, persisted alongside parameters but never optimized.
  void append_buffers(const std::string& prefix, ParameterList& out) const;
  void load_buffers(const ad::Tensor& mean, const ad::Tensor& var);
};

// Sets every parameter to the value stored under the same name in `source`.
// Throws std::runtime_error naming the first missing or mis-shaped tensor.
void copy_parameters(const ParameterList& source, const ParameterList& target);

std::vector<ad::Tensor> tensors_of(const ParameterList& params);

}  // namespace mantra
