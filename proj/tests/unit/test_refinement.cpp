#include <doctest.h>

#include <cmath>
#include <random>

#include "mantra/refinement.hpp"
#include "mantra/synthetic.hpp"
#include "oracles.hpp"
#include "suites.hpp"

using namespace mantra;

namespace {

SemanticMap random_map(std::size_t h, std::size_t w, std::uint64_t seed) {
  SemanticMap m;
  m.height = h;
  m.width = w;
  m.resolution = 0.5;
  m.origin = {-3.0, 2.0};
  std::mt19937_64 rng(seed);
  m.cells = oracle::uniform(2 * h * w, rng, 0.0, 1.0);
  return m;
}

std::vector<double> bn_relu(std::vector<double> x, std::size_t c, std::size_t hw,
                            const BatchNorm2d& bn) {
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double inv = 1.0 / std::sqrt(bn.stats.running_var[ch] + bn.stats.epsilon);
    for (std::size_t i = 0; i < hw; ++i) {
      double& v = x[ch * hw + i];
      v = bn.scale.at(ch) * (v - bn.stats.running_mean[ch]) * inv + bn.shift.at(ch);
      v = std::max(v, 0.0);
    }
  }
  return x;
}

FeatureMap small_features() {
  FeatureMap fm;
  std::vector<double> g(16 * 3 * 4);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<double>(i % 29) - 7.0;
  fm.grid = ad::Tensor::from({16, 3, 4}, g);
  fm.origin = {10.0, -5.0};
  fm.cell_size = 2.0;
  return fm;
}

}  // namespace

TEST_SUITE("refinement") {
  TEST_CASE("zero map with zero biases gives zero features") {
    auto r = RefinementModel::create({}, 1);
    for (auto& v : r.conv1.bias.mutable_data()) v = 0.0;
    for (auto& v : r.conv2.bias.mutable_data()) v = 0.0;
    auto m = random_map(10, 12, 1);
    std::fill(m.cells.begin(), m.cells.end(), 0.0);
    const auto fm = r.extract_feature_map(m);
    for (double v : fm.grid.data()) CHECK(v == 0.0);
  }

  TEST_CASE("feature map size and cell geometry") {
    const auto r = RefinementModel::create({}, 1);
    const auto fm = r.extract_feature_map(random_map(64, 64, 2));
    CHECK(fm.channels() == 16);
    CHECK(fm.height() == 32);
    CHECK(fm.width() == 32);
    CHECK(fm.cell_size == 1.0);
    CHECK(fm.origin == Vec2{-3.0, 2.0});
    auto three = random_map(8, 8, 2);
    three.channels = 3;
    three.cells.resize(3 * 64);
    CHECK_THROWS_AS(r.extract_feature_map(three), std::invalid_argument);
  }

  TEST_CASE("feature extraction composes the conv and batch-norm oracles") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto r = RefinementModel::create({}, seed);
      std::mt19937_64 rng(seed + 50);
      r.bn1.stats.running_mean = oracle::uniform(8, rng);
      r.bn1.stats.running_var = oracle::uniform(8, rng, 0.5, 2.0);
      r.bn2.stats.running_mean = oracle::uniform(16, rng);
      r.bn2.stats.running_var = oracle::uniform(16, rng, 0.5, 2.0);
      const auto m = random_map(9, 11, seed);
      std::size_t h1 = 0, w1 = 0, h2 = 0, w2 = 0;
      auto a = oracle::conv2d(m.cells, 1, 2, 9, 11, r.conv1.weight.values(),
                              r.conv1.bias.values(), 8, 3, 2, 1, h1, w1);
      a = bn_relu(a, 8, h1 * w1, r.bn1);
      auto b = oracle::conv2d(a, 1, 8, h1, w1, r.conv2.weight.values(), r.conv2.bias.values(), 16,
                              3, 1, 1, h2, w2);
      b = bn_relu(b, 16, h2 * w2, r.bn2);
      const auto fm = r.extract_feature_map(m);
      REQUIRE(fm.grid.size() == b.size());
      for (std::size_t i = 0; i < b.size(); ++i) CHECK(fm.grid.at(i) == doctest::Approx(b[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("pooling: node, midpoint, outside") {
    const auto fm = small_features();
    auto at = [&](std::size_t c, std::size_t r, std::size_t q) { return fm.grid.at((c * 3 + r) * 4 + q); };
    // cell (row 1, col 2) is centred at origin + 2 * (2, 1)
    const auto node = pool_features(fm, std::vector<Vec2>{{14.0, -3.0}});
    for (std::size_t c = 0; c < 16; ++c) CHECK(node[0][c] == at(c, 1, 2));
    const auto mid = pool_features(fm, std::vector<Vec2>{{15.0, -3.0}});
    for (std::size_t c = 0; c < 16; ++c) CHECK(mid[0][c] == doctest::Approx(0.5 * (at(c, 1, 2) + at(c, 1, 3))));
    const auto quarter = pool_features(fm, std::vector<Vec2>{{12.5, -2.5}});
    for (std::size_t c = 0; c < 16; ++c) {
      const double want = 0.75 * 0.75 * at(c, 1, 1) + 0.25 * 0.75 * at(c, 1, 2) +
                          0.75 * 0.25 * at(c, 2, 1) + 0.25 * 0.25 * at(c, 2, 2);
      CHECK(quarter[0][c] == doctest::Approx(want));
    }
    const auto far = pool_features(fm, std::vector<Vec2>{{1e4, 1e4}});
    for (double v : far[0]) CHECK(v == 0.0);
  }

  TEST_CASE("zero offset head leaves predictions unchanged") {
    const auto r = RefinementModel::create({}, 3);
    const auto fm = r.extract_feature_map(random_map(30, 30, 3));
    std::mt19937_64 rng(9);
    Path pred;
    for (int i = 0; i < 8; ++i) pred.push_back({1.0 + 0.3 * i, 4.0 + i});
    const PastEncoding pi{oracle::uniform(48, rng)};
    const auto same = r.refine(pred, {}, pi, fm);
    CHECK(same.iterations.size() == 4);
    CHECK(same.result() == pred);
    const NormalizationTransform t{{2.0, 7.0}, 0.8};
    const auto moved = r.refine(pred, t, pi, fm);
    for (std::size_t i = 0; i < pred.size(); ++i) CHECK(distance(moved.result()[i], pred[i]) < 1e-12);
  }

  TEST_CASE("refinement is deterministic and iterates the configured count") {
    RefinementConfig cfg;
    cfg.iterations = 3;
    auto r = RefinementModel::create(cfg, 4);
    std::mt19937_64 rng(2);
    for (auto& v : r.head.weight.mutable_data()) v = oracle::uniform(1, rng, -0.1, 0.1)[0];
    const auto fm = r.extract_feature_map(random_map(30, 30, 4));
    Path pred;
    for (int i = 0; i < 8; ++i) pred.push_back({3.0, 3.0 + i});
    const PastEncoding pi{oracle::uniform(48, rng)};
    const auto a = r.refine(pred, {}, pi, fm);
    const auto b = r.refine(pred, {}, pi, fm);
    CHECK(a.iterations.size() == 3);
    CHECK(a.result() == b.result());
    CHECK(a.result() != pred);
  }

  TEST_CASE("refinement gradients match central differences") {
    auto r = RefinementModel::create({}, 6);
    std::mt19937_64 rng(6);
    for (auto& v : r.head.weight.mutable_data()) v = oracle::uniform(1, rng, -0.2, 0.2)[0];
    const auto map = map_tensor(random_map(12, 12, 6));
    const auto x = ad::Tensor::from({2, 3}, {0.1, 0.2, 0.4, -0.3, 0.0, 0.5}, true);
    const auto y = ad::Tensor::from({2, 3}, {1.0, 2.0, 3.0, 0.5, 1.5, 2.5}, true);
    const auto pi = ad::Tensor::from({2, 48}, oracle::uniform(96, rng), true);
    const NormalizationTransform ts[2] = {{{1.0, 2.0}, 0.3}, {{2.0, 1.0}, -1.1}};
    auto loss = [&] {
      const auto grid = r.features(map, ad::Mode::kTrain);
      auto [rx, ry] = r.refine_batch(x, y, pi, ts, grid, {-3.0, 2.0}, 1.0);
      return ad::add(ad::sum(ad::mul(rx, rx)), ad::sum(ry));
    };
    std::vector<ad::Tensor> leaves = {x, y, pi, r.head.weight, r.gru.w_candidate,
                                      r.conv2.weight, r.bn1.scale};
    CHECK(oracle::gradient_error(loss, leaves) < 1e-4);
  }

  TEST_CASE("checkpoint round trip keeps batch-norm statistics") {
    auto r = RefinementModel::create({}, 7);
    r.bn1.stats.running_mean.assign(8, 0.25);
    Checkpoint ck;
    r.save_to(ck);
    const auto back = RefinementModel::load_from(decode_checkpoint(encode_checkpoint(ck)), {});
    CHECK(back.bn1.stats.running_mean == r.bn1.stats.running_mean);
    const auto m = random_map(16, 16, 7);
    CHECK(back.extract_feature_map(m).grid.values() == r.extract_feature_map(m).grid.values());
  }

  TEST_CASE("off-road fraction") {
    SemanticMap m;
    m.height = 2;
    m.width = 2;
    m.resolution = 1.0;
    m.cells = {1, 0, 1, 1, 0, 1, 0, 0};
    const std::vector<Vec2> pts = {{0, 0}, {1, 0}, {1, 1}, {50, 50}};
    CHECK(off_road_fraction(pts, m) == 0.5);
  }
}

TEST_SUITE("refinement-trained") {
  TEST_CASE("identity start and training curve on one junction map") {
    SyntheticConfig cfg;
    cfg.straight_count = cfg.arc_count = 0;
    cfg.junction_count = 1;
    cfg.emit_all_branches = true;
    cfg.test_fraction = 0.0;
    const auto ds = generate_synthetic_dataset(cfg, 21);
    const auto samples = chunk_all(ds.train, ds.window);
    REQUIRE(samples.size() >= 4);
    const auto& model0 = suites::trained_overfit().model;
    WriteRule all;
    all.write_all = true;
    const auto memory = fill_memory(samples, model0, Controller{}, all);

    // unrefined top-1 loss, computed sample by sample
    double sx = 0.0, sy = 0.0;
    for (const auto& s : samples) {
      const auto set = predict(s.past, memory, 1, model0);
      for (std::size_t i = 0; i < s.future.size(); ++i) {
        sx += std::pow(set.futures[0][i].x - s.future[i].x, 2);
        sy += std::pow(set.futures[0][i].y - s.future[i].y, 2);
      }
    }
    const double n = static_cast<double>(samples.size() * samples[0].future.size());
    const double unrefined = 0.5 * (sx / n + sy / n);

    auto model = model0.clone();
    auto refiner = RefinementModel::create({}, 2);
    RefineTrainOptions o;
    o.epochs = 100;
    o.validation_fraction = 0.0;
    const auto r = train_refinement(refiner, model, samples, ds.maps, memory, o);
    CHECK(r.initial_loss == doctest::Approx(unrefined).epsilon(1e-12));
    REQUIRE(r.train_loss.size() == 100);
    double first = 0.0, second = 0.0;
    for (std::size_t i = 0; i < 50; ++i) {
      CHECK(std::isfinite(r.train_loss[i]));
      first += r.train_loss[i];
      second += r.train_loss[i + 50];
    }
    CHECK(second <= first);
  }
}
