#include "mantra/refinement.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mantra/optim.hpp"

namespace mantra {

namespace {

constexpr std::size_t kFeatureChannels = 16;

ad::Tensor select_columns(std::size_t future_len, std::size_t offset) {
  std::vector<double> m(2 * future_len * future_len, 0.0);
  for (std::size_t i = 0; i < future_len; ++i) m[(2 * i + offset) * future_len + i] = 1.0;
  return ad::Tensor::from({2 * future_len, future_len}, std::move(m));
}

ad::Tensor per_row_constant(std::span<const NormalizationTransform> transforms, std::size_t cols,
                            double (*pick)(const NormalizationTransform&)) {
  std::vector<double> v;
  v.reserve(transforms.size() * cols);
  for (const auto& t : transforms) v.insert(v.end(), cols, pick(t));
  return ad::Tensor::from({transforms.size(), cols}, std::move(v));
}

ad::Tensor rows_of(std::span<const std::vector<double>* const> rows) {
  const std::size_t width = rows.empty() ? 0 : rows.front()->size();
  std::vector<double> v;
  v.reserve(rows.size() * width);
  for (const auto* r : rows) v.insert(v.end(), r->begin(), r->end());
  return ad::Tensor::from({rows.size(), width}, std::move(v));
}

ad::Tensor coordinate_rows(std::span<const Path* const> paths, bool take_y) {
  const std::size_t f = paths.empty() ? 0 : paths.front()->size();
  std::vector<double> v;
  v.reserve(paths.size() * f);
  for (const auto* p : paths) {
    for (const auto& q : *p) v.push_back(take_y ? q.y : q.x);
  }
  return ad::Tensor::from({paths.size(), f}, std::move(v));
}

}  // namespace

std::vector<std::vector<double>> pool_features(const FeatureMap& features,
                                               std::span<const Vec2> world_points) {
  ad::NoGradGuard guard;
  std::vector<double> pts;
  pts.reserve(2 * world_points.size());
  for (const auto& p : world_points) {
    const Vec2 c = features.to_cell(p);
    pts.push_back(c.x);
    pts.push_back(c.y);
  }
  const auto sampled = ad::bilinear_sample(
      features.grid, ad::Tensor::from({world_points.size(), 2}, std::move(pts)));
  const std::size_t ch = features.channels();
  std::vector<std::vector<double>> out(world_points.size());
  for (std::size_t i = 0; i < world_points.size(); ++i) {
    out[i].assign(sampled.data().begin() + static_cast<std::ptrdiff_t>(i * ch),
                  sampled.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * ch));
  }
  return out;
}

ad::Tensor map_tensor(const SemanticMap& map) {
  return ad::Tensor::from({1, map.channels, map.height, map.width}, map.cells);
}

RefinementModel RefinementModel::create(const RefinementConfig& config, std::uint64_t seed) {
  if (config.hidden == 0 || config.map_channels == 0 || config.iterations == 0) {
    throw std::invalid_argument("refinement widths and iteration count must be positive");
  }
  Rng rng(sub_seed(seed, "refine"));
  RefinementModel m;
  m.config_ = config;
  m.conv1 = Conv2dLayer::create(config.map_channels, 8, 3, 2, 1, rng);
  m.bn1 = BatchNorm2d::create(8);
  m.conv2 = Conv2dLayer::create(8, kFeatureChannels, 3, 1, 1, rng);
  m.bn2 = BatchNorm2d::create(kFeatureChannels);
  m.gru = GruParams::create(kFeatureChannels + 2, config.hidden, rng);
  m.head = Dense::zeros(config.hidden, 2);
  m.bridge = Dense::zeros(config.hidden, config.hidden);
  auto w = m.bridge.weight.mutable_data();
  for (std::size_t i = 0; i < config.hidden; ++i) w[i * config.hidden + i] = 1.0;
  return m;
}

ad::Tensor RefinementModel::features(const ad::Tensor& map, ad::Mode mode) {
  auto x = ad::relu(bn1(conv1(map), mode));
  x = ad::relu(bn2(conv2(x), mode));
  return ad::reshape(x, {x.dim(1), x.dim(2), x.dim(3)});
}

FeatureMap RefinementModel::extract_feature_map(const SemanticMap& map) const {
  if (map.channels != config_.map_channels) {
    throw std::invalid_argument(fmt::format("map has {} channels, refinement expects {}",
                                            map.channels, config_.map_channels));
  }
  if (map.height == 0 || map.width == 0) {
    throw std::invalid_argument("map is smaller than one feature cell");
  }
  ad::NoGradGuard guard;
  RefinementModel eval = *this;  // BN statistics are copied, never updated in eval mode
  FeatureMap fm;
  fm.grid = eval.features(map_tensor(map), ad::Mode::kEval);
  fm.origin = map.origin;
  fm.cell_size = map.resolution * static_cast<double>(conv1.stride);
  return fm;
}

std::pair<ad::Tensor, ad::Tensor> RefinementModel::refine_batch(
    ad::Tensor x, ad::Tensor y, const ad::Tensor& pi,
    std::span<const NormalizationTransform> transforms, const ad::Tensor& grid, Vec2 origin,
    double cell_size, std::vector<std::pair<ad::Tensor, ad::Tensor>>* trace) const {
  const std::size_t batch = x.dim(0), steps = x.dim(1);
  if (y.shape() != x.shape() || transforms.size() != batch || pi.dim(0) != batch) {
    throw ad::ShapeError("refine_batch: coordinate, transform and encoding batches disagree");
  }
  const auto cos_t = per_row_constant(transforms, steps, [](const NormalizationTransform& t) {
    return std::cos(t.rotation);
  });
  const auto sin_t = per_row_constant(transforms, steps, [](const NormalizationTransform& t) {
    return std::sin(t.rotation);
  });
  const auto tx = per_row_constant(transforms, steps, [](const NormalizationTransform& t) {
    return t.translation.x;
  });
  const auto ty = per_row_constant(transforms, steps, [](const NormalizationTransform& t) {
    return t.translation.y;
  });
  const double inv_cell = 1.0 / cell_size, inv_scale = 1.0 / config_.coord_scale;
  const ad::Tensor h0 = config_.learned_bridge ? bridge(pi) : pi;

  for (std::size_t it = 0; it < config_.iterations; ++it) {
    auto xw = ad::add(ad::add(ad::mul(cos_t, x), ad::mul(sin_t, y)), tx);
    auto yw = ad::add(ad::sub(ad::mul(cos_t, y), ad::mul(sin_t, x)), ty);
    auto col = ad::scale(ad::add_scalar(xw, -origin.x), inv_cell);
    auto row = ad::scale(ad::add_scalar(yw, -origin.y), inv_cell);
    auto pts = ad::concat_cols(ad::reshape(col, {batch * steps, 1}),
                               ad::reshape(row, {batch * steps, 1}));
    auto feats = ad::reshape(ad::bilinear_sample(grid, pts), {batch, steps * kFeatureChannels});

    ad::Tensor h = h0;
    std::vector<ad::Tensor> dx, dy;
    for (std::size_t i = 0; i < steps; ++i) {
      const ad::Tensor parts[3] = {ad::slice_cols(feats, i * kFeatureChannels, kFeatureChannels),
                                   ad::scale(ad::slice_cols(x, i, 1), inv_scale),
                                   ad::scale(ad::slice_cols(y, i, 1), inv_scale)};
      h = gru_step(ad::concat_cols(parts), h, gru);
      auto off = head(h);
      dx.push_back(ad::slice_cols(off, 0, 1));
      dy.push_back(ad::slice_cols(off, 1, 1));
    }
    x = ad::add(x, ad::concat_cols(dx));
    y = ad::add(y, ad::concat_cols(dy));
    if (trace) trace->emplace_back(x, y);
  }
  return {x, y};
}

RefinementTrace RefinementModel::refine(const Path& world_prediction,
                                        const NormalizationTransform& transform,
                                        const PastEncoding& pi,
                                        const FeatureMap& features) const {
  ad::NoGradGuard guard;
  RefinementTrace out;
  out.input = world_prediction;
  const Path canon = apply_transform(world_prediction, transform);
  const Path* rows[1] = {&canon};
  const std::vector<double>* pis[1] = {&pi.code};
  std::vector<std::pair<ad::Tensor, ad::Tensor>> trace;
  const NormalizationTransform ts[1] = {transform};
  refine_batch(coordinate_rows(rows, false), coordinate_rows(rows, true), rows_of(pis), ts,
               features.grid, features.origin, features.cell_size, &trace);
  for (const auto& [x, y] : trace) {
    Path p(canon.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = transform.to_world({x.at(i), y.at(i)});
    out.iterations.push_back(std::move(p));
  }
  return out;
}

ParameterList RefinementModel::parameters() const {
  ParameterList out;
  conv1.append_parameters("refine.conv1", out);
  bn1.append_parameters("refine.bn1", out);
  conv2.append_parameters("refine.conv2", out);
  bn2.append_parameters("refine.bn2", out);
  gru.append_parameters("refine.gru", out);
  head.append_parameters("refine.head", out);
  if (config_.learned_bridge) bridge.append_parameters("refine.bridge", out);
  return out;
}

ParameterList RefinementModel::buffers() const {
  ParameterList out;
  bn1.append_buffers("refine.bn1", out);
  bn2.append_buffers("refine.bn2", out);
  return out;
}

void RefinementModel::save_to(Checkpoint& ckpt) const {
  ckpt.add_all(parameters());
  ckpt.add_all(buffers());
}

RefinementModel RefinementModel::load_from(const Checkpoint& ckpt,
                                           const RefinementConfig& config) {
  RefinementModel m = create(config, 0);
  copy_parameters(ckpt.tensors, m.parameters());
  m.bn1.load_buffers(ckpt.get("refine.bn1.running_mean"), ckpt.get("refine.bn1.running_var"));
  m.bn2.load_buffers(ckpt.get("refine.bn2.running_mean"), ckpt.get("refine.bn2.running_var"));
  return m;
}

RefinementModel RefinementModel::clone() const {
  RefinementModel m = create(config_, 0);
  copy_parameters(parameters(), m.parameters());
  m.bn1.stats = bn1.stats;
  m.bn2.stats = bn2.stats;
  return m;
}

double off_road_fraction(std::span<const Vec2> world_points, const SemanticMap& map) {
  if (world_points.empty()) return 0.0;
  std::size_t off = 0;
  for (const auto& p : world_points) {
    if (map.lookup(SemanticMap::kRoad, p, 0.0) < 0.5) ++off;
  }
  return static_cast<double>(off) / static_cast<double>(world_points.size());
}

// --- training -------------------------------------------------------------

namespace {

struct MapGroup {
  std::string map_id;
  std::vector<std::size_t> samples;
};

std::vector<MapGroup> group_by_map(std::span<const Sample> samples,
                                   std::span<const std::size_t> indices,
                                   const std::map<std::string, SemanticMap>& maps) {
  std::map<std::string, std::vector<std::size_t>> by;
  for (std::size_t i : indices) {
    const auto& id = samples[i].map_id;
    if (!maps.count(id)) {
      throw std::invalid_argument(fmt::format(
          "sample from track '{}' has no semantic map '{}'", samples[i].track_id, id));
    }
    by[id].push_back(i);
  }
  std::vector<MapGroup> out;
  for (auto& [id, v] : by) out.push_back({id, std::move(v)});
  return out;
}

struct BatchLoss {
  ad::Tensor loss;
  std::size_t count = 0;
};

}  // namespace

RefineTrainResult train_refinement(RefinementModel& refiner, EncDecModel& model,
                                   std::span<const Sample> samples,
                                   const std::map<std::string, SemanticMap>& maps,
                                   const MemoryStore& memory, const RefineTrainOptions& options) {
  if (samples.empty()) throw std::invalid_argument("refinement training needs samples");
  if (memory.empty()) throw EmptyMemoryError();
  const std::size_t f = model.config().future_len;

  // Encoders are frozen: encodings and the memory read are fixed for the run.
  const auto enc = encode_samples(model, samples);
  std::vector<std::size_t> retrieved(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto top = read_top_k(enc.pasts[i], memory, 2);
    std::size_t pick = top.front().index;
    if (options.exclude_own_entry && memory[pick].source_id == i && top.size() > 1) {
      pick = top[1].index;
    }
    retrieved[i] = pick;
  }

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(sub_seed(options.seed, "refine.split"));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(
      std::floor(options.validation_fraction * static_cast<double>(samples.size())));
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  auto train_groups = group_by_map(samples, train_idx, maps);
  const auto val_groups = group_by_map(samples, val_idx, maps);

  std::map<std::string, ad::Tensor> map_tensors;
  for (const auto& [id, m] : maps) {
    if (m.channels != refiner.config().map_channels) {
      throw std::invalid_argument(fmt::format("map '{}' has {} channels, refinement expects {}",
                                              id, m.channels, refiner.config().map_channels));
    }
    map_tensors.emplace(id, map_tensor(m));
  }
  const auto px = select_columns(f, 0), py = select_columns(f, 1);

  auto batch_loss = [&](const MapGroup& g, ad::Mode mode) {
    std::vector<const std::vector<double>*> pis, phis;
    std::vector<const Path*> truth;
    std::vector<NormalizationTransform> ts;
    for (std::size_t i : g.samples) {
      pis.push_back(&enc.pasts[i].code);
      phis.push_back(&memory[retrieved[i]].value.code);
      truth.push_back(&samples[i].future);
      ts.push_back(samples[i].transform);
    }
    const auto pi = rows_of(pis);
    const auto decoded = model.decode_batch(pi, rows_of(phis));
    const auto grid = refiner.features(map_tensors.at(g.map_id), mode);
    const auto& m = maps.at(g.map_id);
    auto [x, y] = refiner.refine_batch(ad::matmul(decoded, px), ad::matmul(decoded, py), pi, ts,
                                       grid, m.origin,
                                       m.resolution * static_cast<double>(refiner.conv1.stride));
    auto loss = ad::scale(ad::add(ad::mse(x, coordinate_rows(truth, false)),
                                  ad::mse(y, coordinate_rows(truth, true))),
                          0.5);
    return BatchLoss{loss, g.samples.size()};
  };

  auto validation = [&]() {
    if (val_groups.empty()) return std::numeric_limits<double>::quiet_NaN();
    ad::NoGradGuard guard;
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& g : val_groups) {
      auto b = batch_loss(g, ad::Mode::kEval);
      sum += b.loss.item() * static_cast<double>(b.count);
      n += b.count;
    }
    return sum / static_cast<double>(n);
  };

  ParameterList trainable = refiner.parameters();
  if (options.finetune_decoder) {
    for (auto& p : model.decoder_parameters()) trainable.push_back(p);
  }
  auto tensors = tensors_of(trainable);
  auto adam = AdamState::for_parameters(tensors, AdamOptions{options.learning_rate});

  auto snapshot = [&]() {
    auto v = snapshot_values(trainable);
    for (const auto& b : refiner.buffers()) v.push_back(b.tensor.values());
    return v;
  };
  auto restore = [&](const std::vector<std::vector<double>>& v) {
    restore_values(trainable, v);
    const std::size_t k = trainable.size();
    refiner.bn1.stats.running_mean = v[k];
    refiner.bn1.stats.running_var = v[k + 1];
    refiner.bn2.stats.running_mean = v[k + 2];
    refiner.bn2.stats.running_var = v[k + 3];
  };

  RefineTrainResult result;
  double best = validation();
  auto best_values = snapshot();
  bool first_step = true;

  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    std::shuffle(train_groups.begin(), train_groups.end(), rng);
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& g : train_groups) {
      zero_grads(tensors);
      auto b = batch_loss(g, ad::Mode::kTrain);
      const double value = b.loss.item();
      if (!std::isfinite(value)) {
        throw TrainingDiverged(fmt::format(
            "refinement loss became {} at epoch {} on map '{}'", value, epoch, g.map_id));
      }
      if (first_step) {
        result.initial_loss = value;
        first_step = false;
      }
      b.loss.backward();
      clip_grad_norm(tensors, options.grad_clip);
      adam_update(tensors, adam);
      sum += value * static_cast<double>(b.count);
      n += b.count;
    }
    result.train_loss.push_back(n ? sum / static_cast<double>(n) : 0.0);
    const double val = validation();
    result.validation_loss.push_back(val);
    if (options.on_epoch) options.on_epoch(epoch, result.train_loss.back(), val);
    if (std::isnan(val) || val < best) {
      best = val;
      result.best_epoch = epoch;
      best_values = snapshot();
    }
  }
  restore(best_values);
  return result;
}

}  // namespace mantra
