#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mantra/autodiff.hpp"

namespace mantra {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamOptions options;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;

  static AdamState for_parameters(std::span<const ad::Tensor> params, AdamOptions options = {});
};

struct AdamReport {
  // Indices of parameter tensors whose gradient held a NaN or infinity;
  // those tensors and their moments are left untouched.
  std::vector<std::size_t> rejected;
  bool ok() const { return rejected.empty(); }
};

// One bias-corrected Adam step using the gradients accumulated on `params`.
// Parameters without a gradient are treated as having a zero gradient.
AdamReport adam_update(std::span<ad::Tensor> params, AdamState& state);

// Rescales gradients so that their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::span<ad::Tensor> params, double max_norm);

void zero_grads(std::span<ad::Tensor> params);

}  // namespace mantra
