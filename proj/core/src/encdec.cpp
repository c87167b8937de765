#include "mantra/encdec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mantra/optim.hpp"

namespace mantra {

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ad::ShapeError("cosine_similarity: widths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()) + " differ");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double s = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(s, -1.0, 1.0);
}

ad::Tensor stack_paths(std::span<const Path* const> paths, double scale) {
  const std::size_t len = paths.front()->size();
  std::vector<double> v;
  v.reserve(paths.size() * len * 2);
  for (const Path* p : paths) {
    for (auto q : *p) {
      v.push_back(q.x / scale);
      v.push_back(q.y / scale);
    }
  }
  return ad::Tensor::from({paths.size(), len * 2}, std::move(v));
}

EncDecModel EncDecModel::create(const EncDecConfig& config, std::uint64_t seed) {
  if (config.past_len < 1 || config.future_len < 1) {
    throw std::invalid_argument("EncDecModel: sequence lengths must be positive");
  }
  if (!(config.coord_scale > 0.0)) throw std::invalid_argument("EncDecModel: coord_scale <= 0");
  Rng rng(seed);
  EncDecModel m;
  m.config_ = config;
  m.past_encoder = GruParams::create(2, config.past_hidden, rng);
  m.future_encoder = GruParams::create(2, config.future_hidden, rng);
  m.decoder = GruParams::create(1, config.past_hidden + config.future_hidden, rng);
  m.head = Dense::create(config.past_hidden + config.future_hidden, 2, rng);
  return m;
}

ad::Tensor EncDecModel::encode(std::span<const Path* const> paths, std::size_t len,
                               const GruParams& gru) const {
  if (paths.empty()) throw std::invalid_argument("encode: empty batch");
  for (const Path* p : paths) {
    if (p->size() != len) {
      throw std::invalid_argument("encode: expected " + std::to_string(len) + " points, got " +
                                  std::to_string(p->size()));
    }
  }
  const ad::Tensor seq = stack_paths(paths, config_.coord_scale);
  ad::Tensor h = ad::Tensor::zeros({paths.size(), gru.hidden_width});
  for (std::size_t t = 0; t < len; ++t) {
    h = gru_step(ad::slice_cols(seq, 2 * t, 2), h, gru);
  }
  return h;
}

ad::Tensor EncDecModel::encode_past_batch(std::span<const Path* const> pasts) const {
  return encode(pasts, config_.past_len, past_encoder);
}

ad::Tensor EncDecModel::encode_future_batch(std::span<const Path* const> futures) const {
  return encode(futures, config_.future_len, future_encoder);
}

ad::Tensor EncDecModel::decode_batch(const ad::Tensor& pi, const ad::Tensor& phi) const {
  if (pi.dim(1) != config_.past_hidden || phi.dim(1) != config_.future_hidden) {
    throw ad::ShapeError("decode: encodings " + ad::to_string(pi.shape()) + " and " +
                         ad::to_string(phi.shape()) + " do not match widths " +
                         std::to_string(config_.past_hidden) + " + " +
                         std::to_string(config_.future_hidden));
  }
  const std::size_t batch = pi.dim(0);
  ad::Tensor h = ad::concat_cols(pi, phi);
  const ad::Tensor zero_input = ad::Tensor::zeros({batch, 1});
  std::vector<ad::Tensor> steps;
  steps.reserve(config_.future_len);
  for (std::size_t t = 0; t < config_.future_len; ++t) {
    h = gru_step(zero_input, h, decoder);
    steps.push_back(head(h));
  }
  return ad::scale(ad::concat_cols(steps), config_.coord_scale);
}

PastEncoding EncDecModel::encode_past(const Path& past) const {
  ad::NoGradGuard guard;
  const Path* batch[] = {&past};
  return {encode_past_batch(batch).values()};
}

FutureEncoding EncDecModel::encode_future(const Path& future) const {
  ad::NoGradGuard guard;
  const Path* batch[] = {&future};
  return {encode_future_batch(batch).values()};
}

Path EncDecModel::decode(const PastEncoding& pi, const FutureEncoding& phi) const {
  const FutureEncoding* phis[] = {&phi};
  return decode_many(pi, phis).front();
}

std::vector<Path> EncDecModel::decode_many(const PastEncoding& pi,
                                           std::span<const FutureEncoding* const> phis) const {
  if (pi.width() != config_.past_hidden) {
    throw ad::ShapeError("decode: past encoding width " + std::to_string(pi.width()) +
                         ", expected " + std::to_string(config_.past_hidden));
  }
  if (!pi.finite()) throw std::invalid_argument("decode: non-finite past encoding");
  std::vector<double> pis, phiv;
  for (const auto* phi : phis) {
    if (phi->width() != config_.future_hidden) {
      throw ad::ShapeError("decode: future encoding width " + std::to_string(phi->width()) +
                           ", expected " + std::to_string(config_.future_hidden));
    }
    if (!phi->finite()) throw std::invalid_argument("decode: non-finite future encoding");
    pis.insert(pis.end(), pi.code.begin(), pi.code.end());
    phiv.insert(phiv.end(), phi->code.begin(), phi->code.end());
  }
  ad::NoGradGuard guard;
  const auto out = decode_batch(ad::Tensor::from({phis.size(), config_.past_hidden}, pis),
                                ad::Tensor::from({phis.size(), config_.future_hidden}, phiv));
  std::vector<Path> paths(phis.size());
  const std::size_t f = config_.future_len;
  for (std::size_t b = 0; b < phis.size(); ++b) {
    paths[b].resize(f);
    for (std::size_t t = 0; t < f; ++t) {
      paths[b][t] = {out.at(b * 2 * f + 2 * t), out.at(b * 2 * f + 2 * t + 1)};
    }
  }
  return paths;
}

ParameterList EncDecModel::encoder_parameters() const {
  ParameterList out;
  past_encoder.append_parameters("past_encoder", out);
  future_encoder.append_parameters("future_encoder", out);
  return out;
}

ParameterList EncDecModel::decoder_parameters() const {
  ParameterList out;
  decoder.append_parameters("decoder", out);
  head.append_parameters("decoder_head", out);
  return out;
}

ParameterList EncDecModel::parameters() const {
  ParameterList out = encoder_parameters();
  for (auto& p : decoder_parameters()) out.push_back(std::move(p));
  return out;
}

void EncDecModel::save_to(Checkpoint& ckpt) const {
  ckpt.add_all(parameters());
  ckpt.add("encdec.coord_scale", ad::Tensor::scalar(config_.coord_scale));
}

EncDecModel EncDecModel::load_from(const Checkpoint& ckpt, const EncDecConfig& config) {
  EncDecConfig c = config;
  c.past_hidden = ckpt.get("past_encoder.b_update").size();
  c.future_hidden = ckpt.get("future_encoder.b_update").size();
  if (ckpt.contains("encdec.coord_scale")) c.coord_scale = ckpt.get("encdec.coord_scale").item();
  EncDecModel m = create(c, 0);
  copy_parameters(ckpt.tensors, m.parameters());
  return m;
}

EncDecModel EncDecModel::clone() const {
  EncDecModel m = create(config_, 0);
  copy_parameters(parameters(), m.parameters());
  return m;
}

std::vector<std::vector<double>> snapshot_values(const ParameterList& params) {
  std::vector<std::vector<double>> out;
  for (const auto& p : params) out.push_back(p.tensor.values());
  return out;
}

void restore_values(const ParameterList& params, const std::vector<std::vector<double>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = ad::Tensor(params[i].tensor).mutable_data();
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

namespace {

ad::Tensor reconstruction_loss(const EncDecModel& model, std::span<const Sample> samples,
                               std::span<const std::size_t> idx) {
  std::vector<const Path*> pasts, futures;
  std::vector<double> target;
  for (auto i : idx) {
    pasts.push_back(&samples[i].past);
    futures.push_back(&samples[i].future);
    for (auto q : samples[i].future) {
      target.push_back(q.x);
      target.push_back(q.y);
    }
  }
  const ad::Tensor out =
      model.decode_batch(model.encode_past_batch(pasts), model.encode_future_batch(futures));
  return ad::mse(out, ad::Tensor::from(out.shape(), std::move(target)));
}

double mean_loss(const EncDecModel& model, std::span<const Sample> samples,
                 std::span<const std::size_t> idx, std::size_t batch) {
  ad::NoGradGuard guard;
  double total = 0.0;
  for (std::size_t b = 0; b < idx.size(); b += batch) {
    const auto chunk = idx.subspan(b, std::min(batch, idx.size() - b));
    total += reconstruction_loss(model, samples, chunk).item() * static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(idx.size());
}

}  // namespace

double reconstruction_mse(const EncDecModel& model, std::span<const Sample> samples) {
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  return mean_loss(model, samples, idx, 256);
}

TrainResult pretrain_autoencoder(EncDecModel& model, std::span<const Sample> samples,
                                 const TrainOptions& options) {
  if (samples.empty()) throw std::invalid_argument("pretrain: empty dataset");
  Rng rng(options.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(
      std::llround(options.validation_fraction * static_cast<double>(samples.size())));
  if (n_val >= samples.size()) n_val = 0;
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<long>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<long>(n_val), order.end());

  const ParameterList params = model.parameters();
  std::vector<ad::Tensor> tensors = tensors_of(params);
  AdamState adam = AdamState::for_parameters(tensors, {.learning_rate = options.learning_rate});

  TrainResult result;
  result.best_loss = std::numeric_limits<double>::infinity();
  auto best = snapshot_values(params);
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    double total = 0.0;
    for (std::size_t b = 0; b < train.size(); b += options.batch_size) {
      const std::span<const std::size_t> chunk(train.data() + b,
                                               std::min(options.batch_size, train.size() - b));
      zero_grads(tensors);
      const ad::Tensor loss = reconstruction_loss(model, samples, chunk);
      if (!std::isfinite(loss.item())) {
        throw TrainingDiverged("pretrain: non-finite loss at epoch " + std::to_string(epoch) +
                               ", batch starting at " + std::to_string(b));
      }
      loss.backward();
      clip_grad_norm(tensors, options.grad_clip);
      adam_update(tensors, adam);
      total += loss.item() * static_cast<double>(chunk.size());
    }
    const double train_loss = total / static_cast<double>(train.size());
    result.train_loss.push_back(train_loss);
    double monitored = train_loss;
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    if (!val.empty()) {
      val_loss = mean_loss(model, samples, val, 256);
      result.validation_loss.push_back(val_loss);
      monitored = val_loss;
    }
    result.epochs_run = epoch + 1;
    if (options.on_epoch) options.on_epoch(epoch, train_loss, val_loss);
    if (monitored < result.best_loss) {
      result.best_loss = monitored;
      result.best_epoch = epoch;
      best = snapshot_values(params);
      since_best = 0;
    } else if (++since_best >= options.patience) {
      break;
    }
  }
  restore_values(params, best);
  return result;
}

}  // namespace mantra
