#include "mantra/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace mantra {

std::uint64_t sub_seed(std::uint64_t seed, std::string_view name) {
  // FNV-1a over the name, then a splitmix64 finalizer over seed ^ hash.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::uint64_t z = seed ^ h;
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

ad::Tensor uniform_init(ad::Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(ad::element_count(shape));
  for (auto& x : v) x = dist(rng);
  return ad::Tensor::from(std::move(shape), std::move(v), true);
}

Dense Dense::create(std::size_t in, std::size_t out, Rng& rng) {
  Dense d;
  d.weight = uniform_init({out, in}, in, rng);
  d.bias = uniform_init({out}, in, rng);
  return d;
}

Dense Dense::zeros(std::size_t in, std::size_t out) {
  return {ad::Tensor::zeros({out, in}, true), ad::Tensor::zeros({out}, true)};
}

void Dense::append_parameters(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

GruParams GruParams::create(std::size_t input_width, std::size_t hidden_width, Rng& rng) {
  if (input_width == 0 || hidden_width == 0) {
    throw ad::ShapeError("GRU widths must be positive");
  }
  GruParams p;
  p.input_width = input_width;
  p.hidden_width = hidden_width;
  // fan_in is the hidden width, matching the usual recurrent initialization.
  const ad::Shape w{hidden_width, input_width + hidden_width};
  p.w_update = uniform_init(w, hidden_width, rng);
  p.b_update = uniform_init({hidden_width}, hidden_width, rng);
  p.w_reset = uniform_init(w, hidden_width, rng);
  p.b_reset = uniform_init({hidden_width}, hidden_width, rng);
  p.w_candidate = uniform_init(w, hidden_width, rng);
  p.b_candidate = uniform_init({hidden_width}, hidden_width, rng);
  return p;
}

GruParams GruParams::zeros(std::size_t input_width, std::size_t hidden_width) {
  GruParams p;
  p.input_width = input_width;
  p.hidden_width = hidden_width;
  const ad::Shape w{hidden_width, input_width + hidden_width};
  p.w_update = ad::Tensor::zeros(w, true);
  p.b_update = ad::Tensor::zeros({hidden_width}, true);
  p.w_reset = ad::Tensor::zeros(w, true);
  p.b_reset = ad::Tensor::zeros({hidden_width}, true);
  p.w_candidate = ad::Tensor::zeros(w, true);
  p.b_candidate = ad::Tensor::zeros({hidden_width}, true);
  return p;
}

void GruParams::append_parameters(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".w_update", w_update});
  out.push_back({prefix + ".b_update", b_update});
  out.push_back({prefix + ".w_reset", w_reset});
  out.push_back({prefix + ".b_reset", b_reset});
  out.push_back({prefix + ".w_candidate", w_candidate});
  out.push_back({prefix + ".b_candidate", b_candidate});
}

ad::Tensor gru_step(const ad::Tensor& x, const ad::Tensor& h, const GruParams& p) {
  if (x.rank() != 2 || x.dim(1) != p.input_width) {
    throw ad::ShapeError("gru_step: input " + ad::to_string(x.shape()) + " does not match width " +
                         std::to_string(p.input_width));
  }
  if (h.rank() != 2 || h.dim(1) != p.hidden_width) {
    throw ad::ShapeError("gru_step: hidden state " + ad::to_string(h.shape()) +
                         " does not match width " + std::to_string(p.hidden_width));
  }
  if (x.dim(0) != h.dim(0)) {
    throw ad::ShapeError("gru_step: batch mismatch between input " + ad::to_string(x.shape()) +
                         " and hidden state " + ad::to_string(h.shape()));
  }
  const ad::Tensor xh = ad::concat_cols(x, h);
  const ad::Tensor z = ad::sigmoid(ad::linear(xh, p.w_update, p.b_update));
  const ad::Tensor r = ad::sigmoid(ad::linear(xh, p.w_reset, p.b_reset));
  const ad::Tensor n =
      ad::tanh(ad::linear(ad::concat_cols(x, ad::mul(r, h)), p.w_candidate, p.b_candidate));
  return ad::add(ad::mul(z, h), ad::mul(ad::one_minus(z), n));
}

Conv2dLayer Conv2dLayer::create(std::size_t in, std::size_t out, std::size_t kernel,
                                std::size_t stride, std::size_t padding, Rng& rng) {
  Conv2dLayer c;
  const std::size_t fan_in = in * kernel * kernel;
  c.weight = uniform_init({out, in, kernel, kernel}, fan_in, rng);
  c.bias = uniform_init({out}, fan_in, rng);
  c.stride = stride;
  c.padding = padding;
  return c;
}

void Conv2dLayer::append_parameters(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

BatchNorm2d BatchNorm2d::create(std::size_t channels) {
  BatchNorm2d bn;
  bn.scale = ad::Tensor::filled({channels}, 1.0, true);
  bn.shift = ad::Tensor::zeros({channels}, true);
  bn.stats.running_mean.assign(channels, 0.0);
  bn.stats.running_var.assign(channels, 1.0);
  return bn;
}

void BatchNorm2d::append_parameters(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".scale", scale});
  out.push_back({prefix + ".shift", shift});
}

void BatchNorm2d::append_buffers(const std::string& prefix, ParameterList& out) const {
  const std::size_t c = stats.running_mean.size();
  out.push_back({prefix + ".running_mean", ad::Tensor::from({c}, stats.running_mean)});
  out.push_back({prefix + ".running_var", ad::Tensor::from({c}, stats.running_var)});
}

void BatchNorm2d::load_buffers(const ad::Tensor& mean, const ad::Tensor& var) {
  if (mean.size() != stats.running_mean.size() || var.size() != stats.running_var.size()) {
    throw ad::ShapeError("batch norm buffers do not match channel count");
  }
  stats.running_mean = mean.values();
  stats.running_var = var.values();
}

void copy_parameters(const ParameterList& source, const ParameterList& target) {
  for (const auto& t : target) {
    const NamedTensor* found = nullptr;
    for (const auto& s : source) {
      if (s.name == t.name) {
        found = &s;
        break;
      }
    }
    if (!found) throw std::runtime_error("missing parameter '" + t.name + "'");
    if (found->tensor.shape() != t.tensor.shape()) {
      throw std::runtime_error("parameter '" + t.name + "' has shape " +
                               ad::to_string(found->tensor.shape()) + ", expected " +
                               ad::to_string(t.tensor.shape()));
    }
    auto dst = ad::Tensor(t.tensor).mutable_data();
    const auto src = found->tensor.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

std::vector<ad::Tensor> tensors_of(const ParameterList& params) {
  std::vector<ad::Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

}  // namespace mantra
