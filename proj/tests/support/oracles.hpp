#pragma once

// Reference implementations used by the tests. They work on plain vectors and
// share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "mantra/autodiff.hpp"

namespace oracle {

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// input (N,C,H,W), weight (O,C,k,k)
inline std::vector<double> conv2d(const std::vector<double>& in, std::size_t n, std::size_t c,
                                  std::size_t h, std::size_t w, const std::vector<double>& wt,
                                  const std::vector<double>& bias, std::size_t o, std::size_t k,
                                  std::size_t stride, std::size_t pad, std::size_t& oh,
                                  std::size_t& ow) {
  oh = (h + 2 * pad - k) / stride + 1;
  ow = (w + 2 * pad - k) / stride + 1;
  std::vector<double> out(n * o * oh * ow, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t q = 0; q < ow; ++q) {
          double acc = bias[oc];
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t kr = 0; kr < k; ++kr)
              for (std::size_t kc = 0; kc < k; ++kc) {
                const long ir = static_cast<long>(r * stride + kr) - static_cast<long>(pad);
                const long iq = static_cast<long>(q * stride + kc) - static_cast<long>(pad);
                if (ir < 0 || iq < 0 || ir >= static_cast<long>(h) || iq >= static_cast<long>(w))
                  continue;
                acc += in[((b * c + ic) * h + ir) * w + iq] * wt[((oc * c + ic) * k + kr) * k + kc];
              }
          out[((b * o + oc) * oh + r) * ow + q] = acc;
        }
  return out;
}

// One GRU step for a single row, gate weights (H, I+H) acting on [x; h].
inline std::vector<double> gru_step(const std::vector<double>& x, const std::vector<double>& h,
                                    const std::vector<double>& wz, const std::vector<double>& bz,
                                    const std::vector<double>& wr, const std::vector<double>& br,
                                    const std::vector<double>& wn, const std::vector<double>& bn) {
  const std::size_t in = x.size(), hid = h.size(), cols = in + hid;
  std::vector<double> z(hid), r(hid), out(hid);
  for (std::size_t i = 0; i < hid; ++i) {
    double az = bz[i], ar = br[i];
    for (std::size_t j = 0; j < in; ++j) {
      az += wz[i * cols + j] * x[j];
      ar += wr[i * cols + j] * x[j];
    }
    for (std::size_t j = 0; j < hid; ++j) {
      az += wz[i * cols + in + j] * h[j];
      ar += wr[i * cols + in + j] * h[j];
    }
    z[i] = sigmoid(az);
    r[i] = sigmoid(ar);
  }
  for (std::size_t i = 0; i < hid; ++i) {
    double an = bn[i];
    for (std::size_t j = 0; j < in; ++j) an += wn[i * cols + j] * x[j];
    for (std::size_t j = 0; j < hid; ++j) an += wn[i * cols + in + j] * r[j] * h[j];
    out[i] = z[i] * h[i] + (1.0 - z[i]) * std::tanh(an);
  }
  return out;
}

inline std::vector<double> uniform(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                   double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Largest relative error ||analytic - numeric|| / max(||analytic||, ||numeric||)
// over the given leaves, with central differences of step h.
inline double gradient_error(const std::function<mantra::ad::Tensor()>& loss,
                             std::vector<mantra::ad::Tensor> leaves, double h = 1e-5) {
  for (auto& t : leaves) t.zero_grad();
  loss().backward();
  double worst = 0.0;
  for (auto& t : leaves) {
    std::vector<double> analytic(t.size(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto data = t.mutable_data();
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = loss().item();
      data[i] = saved - h;
      const double down = loss().item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      na += analytic[i] * analytic[i];
      nn += numeric * numeric;
    }
    const double denom = std::max(std::sqrt(std::max(na, nn)), 1e-12);
    worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

}  // namespace oracle
