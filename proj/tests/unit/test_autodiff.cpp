#include <doctest.h>

#include <cmath>
#include <random>

#include "mantra/autodiff.hpp"
#include "mantra/layers.hpp"
#include "mantra/optim.hpp"
#include "oracles.hpp"

using namespace mantra;
using ad::Tensor;

namespace {

Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, bool grad = true) {
  return Tensor::from(shape, oracle::uniform(ad::element_count(shape), rng), grad);
}

// Weighted sum so that every output element gets a distinct upstream gradient.
Tensor probe(const Tensor& out, const Tensor& weights) { return ad::sum(ad::mul(out, weights)); }

}  // namespace

TEST_SUITE("autodiff") {
  TEST_CASE("linear and quadratic gradients") {
    auto w = Tensor::scalar(1.7, true);
    ad::mul(w, Tensor::scalar(3.0)).backward();
    CHECK(w.grad()[0] == doctest::Approx(3.0).epsilon(1e-15));

    auto v = Tensor::scalar(5.0, true);
    auto d = ad::add_scalar(v, -2.0);
    ad::mul(d, d).backward();
    CHECK(v.grad()[0] == 6.0);
  }

  TEST_CASE("gradients accumulate across uses of a leaf") {
    auto a = Tensor::from({2}, {1.0, -2.0}, true);
    ad::sum(ad::add(ad::mul(a, a), a)).backward();
    CHECK(a.grad()[0] == 3.0);
    CHECK(a.grad()[1] == -3.0);
  }

  TEST_CASE("shape mismatches are rejected") {
    auto a = Tensor::zeros({2, 3});
    auto b = Tensor::zeros({3, 2});
    CHECK_THROWS_AS(ad::add(a, b), ad::ShapeError);
    CHECK_THROWS_AS(ad::matmul(a, a), ad::ShapeError);
  }

  TEST_CASE("no-grad guard records no history") {
    auto a = Tensor::from({1}, {2.0}, true);
    Tensor out;
    {
      ad::NoGradGuard guard;
      out = ad::mul(a, a);
    }
    CHECK(out.node()->parents.empty());
    CHECK(ad::grad_enabled());
  }

  TEST_CASE("gru step: zero parameters keep a zero state") {
    const auto p = GruParams::zeros(3, 4);
    auto x = Tensor::from({1, 3}, {0.3, -1.0, 2.0});
    auto h = gru_step(x, Tensor::zeros({1, 4}), p);
    for (double v : h.data()) CHECK(v == 0.0);
  }

  TEST_CASE("gru step: saturated update gate copies the state") {
    auto p = GruParams::zeros(2, 3);
    for (auto& b : p.b_update.mutable_data()) b = 50.0;
    std::mt19937_64 rng(4);
    for (auto& v : p.w_candidate.mutable_data()) v = oracle::uniform(1, rng)[0];
    auto h0 = Tensor::from({1, 3}, {0.5, -0.25, 0.9});
    auto h = gru_step(Tensor::from({1, 2}, {1.0, -1.0}), h0, p);
    for (std::size_t i = 0; i < 3; ++i) CHECK(h.at(i) == doctest::Approx(h0.at(i)).epsilon(1e-12));
  }

  TEST_CASE("gru step matches the scalar transcription") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed);
      const auto p = GruParams::create(5, 7, rng);
      std::mt19937_64 r2(seed + 100);
      const auto x = oracle::uniform(5, r2);
      const auto h = oracle::uniform(7, r2);
      const auto got = gru_step(Tensor::from({1, 5}, x), Tensor::from({1, 7}, h), p);
      const auto want = oracle::gru_step(x, h, p.w_update.values(), p.b_update.values(),
                                         p.w_reset.values(), p.b_reset.values(),
                                         p.w_candidate.values(), p.b_candidate.values());
      for (std::size_t i = 0; i < 7; ++i) CHECK(got.at(i) == doctest::Approx(want[i]).epsilon(1e-13));
    }
  }

  TEST_CASE("gru sequence mse gradients match central differences") {
    Rng rng(11);
    const auto p = GruParams::create(2, 6, rng);
    std::mt19937_64 r2(12);
    std::vector<Tensor> xs;
    for (int t = 0; t < 5; ++t) xs.push_back(random_tensor({3, 2}, r2, false));
    const auto target = random_tensor({3, 6}, r2, false);
    auto loss = [&] {
      Tensor h = Tensor::zeros({3, 6});
      for (const auto& x : xs) h = gru_step(x, h, p);
      return ad::mse(h, target);
    };
    ParameterList params;
    p.append_parameters("gru", params);
    CHECK(oracle::gradient_error(loss, tensors_of(params)) < 1e-4);
  }

  TEST_CASE("dense, sigmoid and relu heads pass finite differences") {
    std::mt19937_64 rng(5);
    Rng init(6);
    const auto d = Dense::create(4, 3, init);
    const auto x = random_tensor({5, 4}, rng);
    const auto w = random_tensor({5, 3}, rng, false);
    CHECK(oracle::gradient_error([&] { return probe(d(x), w); }, {d.weight, d.bias, x}) < 1e-4);
    CHECK(oracle::gradient_error([&] { return probe(ad::sigmoid(d(x)), w); },
                                 {d.weight, d.bias, x}) < 1e-4);
    CHECK(oracle::gradient_error([&] { return probe(ad::relu(d(x)), w); },
                                 {d.weight, d.bias, x}) < 1e-4);
  }

  TEST_CASE("conv2d: identity kernel reproduces the input") {
    std::mt19937_64 rng(1);
    const auto in = random_tensor({1, 1, 5, 6}, rng, false);
    std::vector<double> k(9, 0.0);
    k[4] = 1.0;
    const auto out = ad::conv2d(in, Tensor::from({1, 1, 3, 3}, k), Tensor::zeros({1}), 1, 1);
    REQUIRE(out.shape() == in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) CHECK(out.at(i) == in.at(i));
  }

  TEST_CASE("conv2d: ones kernel on a constant field gives 9c inside") {
    const auto in = Tensor::filled({1, 1, 4, 4}, 1.5);
    const auto out =
        ad::conv2d(in, Tensor::filled({1, 1, 3, 3}, 1.0), Tensor::zeros({1}), 1, 1);
    CHECK(out.at(1 * 4 + 1) == 13.5);
    CHECK(out.at(0) == 6.0);  // corner sees 4 cells
  }

  TEST_CASE("conv2d matches the nested-loop oracle") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      std::mt19937_64 rng(seed);
      const std::size_t stride = 1 + seed % 2, pad = seed % 3 == 0 ? 0 : 1;
      const auto in = random_tensor({2, 3, 7, 6}, rng, false);
      const auto w = random_tensor({4, 3, 3, 3}, rng, false);
      const auto b = random_tensor({4}, rng, false);
      const auto out = ad::conv2d(in, w, b, stride, pad);
      std::size_t oh = 0, ow = 0;
      const auto want = oracle::conv2d(in.values(), 2, 3, 7, 6, w.values(), b.values(), 4, 3,
                                       stride, pad, oh, ow);
      REQUIRE(out.shape() == ad::Shape{2, 4, oh, ow});
      for (std::size_t i = 0; i < want.size(); ++i) CHECK(out.at(i) == doctest::Approx(want[i]).epsilon(1e-14));
    }
  }

  TEST_CASE("conv2d gradients match central differences") {
    std::mt19937_64 rng(3);
    const auto in = random_tensor({2, 2, 5, 5}, rng);
    const auto w = random_tensor({3, 2, 3, 3}, rng);
    const auto b = random_tensor({3}, rng);
    const auto probe_w = random_tensor({2, 3, 3, 3}, rng, false);
    CHECK(oracle::gradient_error(
              [&] { return probe(ad::conv2d(in, w, b, 2, 1), probe_w); }, {in, w, b}) < 1e-4);
  }

  TEST_CASE("batch norm: normalized input passes through") {
    // per channel: values {-1, 1} have mean 0 and biased variance 1
    const auto in = Tensor::from({2, 1, 1, 2}, {-1.0, 1.0, 1.0, -1.0});
    ad::BatchNormStats stats{{0.0}, {1.0}};
    const auto out = ad::batch_norm(in, Tensor::filled({1}, 1.0), Tensor::zeros({1}), stats,
                                    ad::Mode::kTrain);
    for (std::size_t i = 0; i < 4; ++i) CHECK(out.at(i) == doctest::Approx(in.at(i)).epsilon(1e-5));
  }

  TEST_CASE("batch norm: zero scale yields the shift") {
    std::mt19937_64 rng(2);
    const auto in = random_tensor({2, 3, 2, 2}, rng, false);
    ad::BatchNormStats stats{{0, 0, 0}, {1, 1, 1}};
    const auto shift = Tensor::from({3}, {0.5, -1.0, 2.0});
    for (auto mode : {ad::Mode::kTrain, ad::Mode::kEval}) {
      const auto out = ad::batch_norm(in, Tensor::zeros({3}), shift, stats, mode);
      for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.at(i) == shift.at((i / 4) % 3));
    }
  }

  TEST_CASE("batch norm train mode standardizes each channel") {
    std::mt19937_64 rng(9);
    auto in = Tensor::from({4, 2, 3, 3}, oracle::uniform(72, rng, -3.0, 7.0));
    ad::BatchNormStats stats{{0, 0}, {1, 1}};
    const auto out = ad::batch_norm(in, Tensor::filled({2}, 1.0), Tensor::zeros({2}), stats,
                                    ad::Mode::kTrain);
    for (std::size_t c = 0; c < 2; ++c) {
      double m = 0.0, v = 0.0;
      for (std::size_t n = 0; n < 4; ++n)
        for (std::size_t i = 0; i < 9; ++i) m += out.at((n * 2 + c) * 9 + i);
      m /= 36.0;
      for (std::size_t n = 0; n < 4; ++n)
        for (std::size_t i = 0; i < 9; ++i) v += std::pow(out.at((n * 2 + c) * 9 + i) - m, 2);
      v /= 36.0;
      CHECK(std::abs(m) < 1e-6);
      CHECK(std::abs(v - 1.0) < 1e-4);
    }
  }

  TEST_CASE("batch norm eval mode uses running statistics") {
    const auto in = Tensor::from({1, 1, 1, 2}, {3.0, 5.0});
    ad::BatchNormStats stats{{1.0}, {4.0}};
    const auto out = ad::batch_norm(in, Tensor::filled({1}, 2.0), Tensor::filled({1}, 0.5),
                                    stats, ad::Mode::kEval);
    CHECK(out.at(0) == doctest::Approx(2.0 * 2.0 / std::sqrt(4.0 + 1e-5) + 0.5));
    CHECK(stats.running_mean[0] == 1.0);
  }

  TEST_CASE("batch norm gradients match central differences") {
    std::mt19937_64 rng(13);
    const auto in = random_tensor({3, 2, 2, 2}, rng);
    const auto scale = random_tensor({2}, rng);
    const auto shift = random_tensor({2}, rng);
    const auto w = random_tensor({3, 2, 2, 2}, rng, false);
    ad::BatchNormStats stats{{0, 0}, {1, 1}};
    CHECK(oracle::gradient_error(
              [&] { return probe(ad::batch_norm(in, scale, shift, stats, ad::Mode::kTrain), w); },
              {in, scale, shift}) < 1e-4);
  }

  TEST_CASE("bilinear sampling: nodes, midpoints, padding, gradients") {
    const auto grid = Tensor::from({1, 2, 2}, {1.0, 3.0, 5.0, 7.0});
    const auto s = ad::bilinear_sample(grid, Tensor::from({4, 2}, {0.0, 0.0, 1.0, 1.0, 0.5, 0.0,
                                                                   0.5, 0.5}));
    CHECK(s.at(0) == 1.0);
    CHECK(s.at(1) == 7.0);
    CHECK(s.at(2) == 2.0);
    CHECK(s.at(3) == 4.0);
    const auto far = ad::bilinear_sample(grid, Tensor::from({1, 2}, {40.0, -9.0}));
    CHECK(far.at(0) == 0.0);

    std::mt19937_64 rng(17);
    const auto g = random_tensor({3, 4, 5}, rng);
    const auto pts = Tensor::from({3, 2}, {1.3, 2.6, 0.2, 0.7, 3.4, 1.1}, true);
    const auto w = random_tensor({3, 3}, rng, false);
    CHECK(oracle::gradient_error([&] { return probe(ad::bilinear_sample(g, pts), w); },
                                 {g, pts}) < 1e-4);
  }

  TEST_CASE("adam: zero gradient leaves parameters and decays moments") {
    std::vector<Tensor> q = {Tensor::from({2}, {3.0, -1.0}, true)};
    auto fresh = AdamState::for_parameters(q, {0.1});
    adam_update(q, fresh);
    CHECK(q[0].values() == std::vector<double>{3.0, -1.0});

    std::vector<Tensor> p = {Tensor::from({2}, {1.0, -1.0}, true)};
    auto st = AdamState::for_parameters(p, {0.1});
    ad::sum(ad::mul(p[0], p[0])).backward();
    adam_update(p, st);
    const double m0 = st.first_moment[0][0], v0 = st.second_moment[0][0];
    zero_grads(p);
    adam_update(p, st);
    CHECK(st.first_moment[0][0] == doctest::Approx(0.9 * m0).epsilon(1e-15));
    CHECK(st.second_moment[0][0] == doctest::Approx(0.999 * v0).epsilon(1e-15));
  }

  TEST_CASE("adam: first step moves by the learning rate") {
    std::vector<Tensor> p = {Tensor::scalar(0.0, true)};
    auto st = AdamState::for_parameters(p, {0.01});
    p[0].mutable_grad()[0] = 1.0;
    adam_update(p, st);
    CHECK(p[0].at(0) == doctest::Approx(-0.01 / (1.0 + 1e-8)).epsilon(1e-12));
  }

  TEST_CASE("adam minimizes a quadratic bowl") {
    std::vector<Tensor> p = {Tensor::from({3}, {4.0, -2.0, 0.5}, true)};
    const auto target = Tensor::from({3}, {1.0, 1.0, -3.0});
    auto st = AdamState::for_parameters(p, {0.01});
    for (int i = 0; i < 5000; ++i) {
      zero_grads(p);
      auto d = ad::sub(p[0], target);
      ad::sum(ad::mul(d, d)).backward();
      adam_update(p, st);
    }
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(p[0].at(i) - target.at(i)) < 1e-3);
  }

  TEST_CASE("adam rejects non-finite gradients") {
    std::vector<Tensor> p = {Tensor::scalar(1.0, true), Tensor::scalar(2.0, true)};
    auto st = AdamState::for_parameters(p);
    p[0].mutable_grad()[0] = std::nan("");
    p[1].mutable_grad()[0] = 1.0;
    const auto rep = adam_update(p, st);
    CHECK(rep.rejected == std::vector<std::size_t>{0});
    CHECK(p[0].at(0) == 1.0);
    CHECK(p[1].at(0) < 2.0);
  }

  TEST_CASE("gradient clipping bounds the global norm") {
    std::vector<Tensor> p = {Tensor::from({2}, {0.0, 0.0}, true)};
    p[0].mutable_grad()[0] = 3.0;
    p[0].mutable_grad()[1] = 4.0;
    CHECK(clip_grad_norm(p, 1.0) == 5.0);
    CHECK(p[0].grad()[0] == doctest::Approx(0.6));
    CHECK(p[0].grad()[1] == doctest::Approx(0.8));
  }
}
