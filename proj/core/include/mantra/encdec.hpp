#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mantra/autodiff.hpp"
#include "mantra/checkpoint.hpp"
#include "mantra/layers.hpp"
#include "mantra/trajectory.hpp"

namespace mantra {

template <typename Tag>
struct Encoding {
  std::vector<double> code;

  std::size_t width() const { return code.size(); }
  bool finite() const {
    for (double v : code) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
  friend bool operator==(const Encoding&, const Encoding&) = default;
};
using PastEncoding = Encoding<struct PastTag>;      // memory key
using FutureEncoding = Encoding<struct FutureTag>;  // memory value

double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct EncDecConfig {
  std::size_t past_len = 4;
  std::size_t future_len = 8;
  std::size_t past_hidden = 48;
  std::size_t future_hidden = 48;
  // Coordinates are divided by this many metres on the way into the
  // encoders and multiplied back on the way out of the decoder head.
  double coord_scale = 1.0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Past encoder, future encoder, and the conditioned decoder. The decoder
// hidden state starts at [pi; phi] and is unrolled future_len steps with a
// zero input; an affine head maps each hidden state to canonical (x, y).
class EncDecModel {
 public:
  static EncDecModel create(const EncDecConfig& config, std::uint64_t seed);

  const EncDecConfig& config() const { return config_; }
  std::size_t decoder_hidden() const { return config_.past_hidden + config_.future_hidden; }

  // Batched graph builders. Paths must be canonical and of the configured
  // lengths. Results: (B, past_hidden), (B, future_hidden), (B, 2F) metres.
  ad::Tensor encode_past_batch(std::span<const Path* const> pasts) const;
  ad::Tensor encode_future_batch(std::span<const Path* const> futures) const;
  ad::Tensor decode_batch(const ad::Tensor& pi, const ad::Tensor& phi) const;

  PastEncoding encode_past(const Path& past) const;
  FutureEncoding encode_future(const Path& future) const;
  Path decode(const PastEncoding& pi, const FutureEncoding& phi) const;
  // Decodes one past against several futures in a single batch.
  std::vector<Path> decode_many(const PastEncoding& pi,
                                std::span<const FutureEncoding* const> phis) const;

  ParameterList encoder_parameters() const;
  ParameterList decoder_parameters() const;
  ParameterList parameters() const;

  void save_to(Checkpoint& ckpt) const;
  // Widths and lengths are inferred from the stored tensors.
  static EncDecModel load_from(const Checkpoint& ckpt, const EncDecConfig& config);
  EncDecModel clone() const;

  GruParams past_encoder;
  GruParams future_encoder;
  GruParams decoder;
  Dense head;

 private:
  ad::Tensor encode(std::span<const Path* const> paths, std::size_t len,
                    const GruParams& gru) const;
  EncDecConfig config_;
};

ad::Tensor stack_paths(std::span<const Path* const> paths, double scale);

struct TrainOptions {
  std::size_t epochs = 5000;  // cap
  std::size_t batch_size = 32;
  double learning_rate = 1e-4;
  double grad_clip = 1.0;
  double validation_fraction = 0.1;
  std::size_t patience = 200;  // epochs without validation improvement
  std::uint64_t seed = 0;
  // Called after every epoch with (epoch, mean training loss, validation loss).
  std::function<void(std::size_t, double, double)> on_epoch;
};

struct TrainResult {
  std::vector<double> train_loss;       // epoch-averaged MSE, m^2
  std::vector<double> validation_loss;  // empty when no validation split
  std::size_t best_epoch = 0;
  double best_loss = 0.0;
  std::size_t epochs_run = 0;
};

// Joint autoencoder training: minimizes MSE between decode(Pi(x_P), Phi(x_F))
// and x_F. The model is left holding the parameters with the best validation
// MSE (training MSE without a validation split).
TrainResult pretrain_autoencoder(EncDecModel& model, std::span<const Sample> samples,
                                 const TrainOptions& options);

// Mean squared reconstruction error over all samples, m^2.
double reconstruction_mse(const EncDecModel& model, std::span<const Sample> samples);

// Snapshot/restore of parameter values, used for best-epoch tracking.
std::vector<std::vector<double>> snapshot_values(const ParameterList& params);
void restore_values(const ParameterList& params, const std::vector<std::vector<double>>& values);

}  // namespace mantra
