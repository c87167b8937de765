#include "mantra/optim.hpp"

#include <cmath>

namespace mantra {

AdamState AdamState::for_parameters(std::span<const ad::Tensor> params, AdamOptions options) {
  AdamState s;
  s.options = options;
  for (const auto& p : params) {
    s.first_moment.emplace_back(p.size(), 0.0);
    s.second_moment.emplace_back(p.size(), 0.0);
  }
  return s;
}

AdamReport adam_update(std::span<ad::Tensor> params, AdamState& state) {
  if (params.size() != state.first_moment.size()) {
    throw ad::ShapeError("adam_update: optimizer state tracks " +
                         std::to_string(state.first_moment.size()) + " tensors, got " +
                         std::to_string(params.size()));
  }
  AdamReport report;
  ++state.step;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != p.size()) {
      throw ad::ShapeError("adam_update: moment shape does not match parameter " +
                           std::to_string(k));
    }
    const auto g = p.grad();
    bool finite = true;
    for (double x : g) finite = finite && std::isfinite(x);
    if (!finite) {
      report.rejected.push_back(k);
      continue;
    }
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * gi;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * gi * gi;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
    }
  }
  return report;
}

double clip_grad_norm(std::span<ad::Tensor> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (std::isfinite(norm) && norm > max_norm && norm > 0.0) {
    const double k = max_norm / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.mutable_grad()) g *= k;
    }
  }
  return norm;
}

void zero_grads(std::span<ad::Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace mantra
