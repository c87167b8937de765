#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mantra/encdec.hpp"
#include "mantra/layers.hpp"
#include "mantra/memory.hpp"
#include "mantra/refinement.hpp"
#include "mantra/semantic_map.hpp"
#include "mantra/trajectory.hpp"

namespace mantra {

// Mean Euclidean error over steps 1..horizon_steps.
double ade(std::span<const Vec2> prediction, std::span<const Vec2> ground_truth,
           std::size_t horizon_steps);
// Euclidean error at the 1-based `step`.
double fde(std::span<const Vec2> prediction, std::span<const Vec2> ground_truth,
           std::size_t step);

enum class Metric { kAde, kFde };

double metric_value(Metric metric, std::span<const Vec2> prediction,
                    std::span<const Vec2> ground_truth, std::size_t horizon_steps);

// Minimum metric over the first min(K, |set|) ranked futures.
double best_of_k(Metric metric, std::span<const Path> ranked, std::span<const Vec2> ground_truth,
                 std::size_t horizon_steps, std::size_t k);

// --- baselines --------------------------------------------------------------

struct KalmanOptions {
  double sigma_q = 0.1;  // process noise, m
  double sigma_r = 0.1;  // observation noise, m
};

// Constant-velocity filter in units of one sample step. The state starts at
// the second past point with the first difference as velocity, is updated
// with every later observation, then propagated `future_len` steps.
Path kalman_baseline(std::span<const Vec2> past, std::size_t future_len,
                     const KalmanOptions& options = {});

// Least-squares affine map from flattened past (2P) to flattened future (2F).
class LinearBaseline {
 public:
  static LinearBaseline fit(std::span<const Sample> samples);
  Path predict(std::span<const Vec2> past) const;

 private:
  std::size_t past_len_ = 0, future_len_ = 0;
  std::vector<double> weights_;  // (2P + 1) x 2F, row-major; last row is the bias
};

struct MlpOptions {
  std::size_t hidden = 64;
  std::size_t epochs = 1000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double coord_scale = 10.0;
  std::uint64_t seed = 0;
};

// Two dense layers with a ReLU in between, trained on MSE with Adam.
class MlpBaseline {
 public:
  static MlpBaseline fit(std::span<const Sample> samples, const MlpOptions& options);
  Path predict(std::span<const Vec2> past) const;
  double training_mse(std::span<const Sample> samples) const;

 private:
  Dense l1_, l2_;
  double scale_ = 1.0;
  std::size_t future_len_ = 0;
};

// The encoder-decoder-free ablation: nearest neighbours by Euclidean distance
// between canonical past coordinates, copying the neighbours' futures.
class CoordinateNeighbors {
 public:
  explicit CoordinateNeighbors(std::span<const Sample> samples);
  PredictionSet predict(std::span<const Vec2> past, std::size_t k) const;
  std::size_t size() const { return pasts_.size(); }

 private:
  std::vector<Path> pasts_;
  std::vector<Path> futures_;
};

// --- evaluation ---------------------------------------------------------------

struct MantraArtifacts {
  const EncDecModel* model = nullptr;
  const MemoryStore* memory = nullptr;
  const RefinementModel* refiner = nullptr;  // null: no refinement
  const std::map<std::string, SemanticMap>* maps = nullptr;
  DecodeMode decode = DecodeMode::kDecode;
  const CoordinateNeighbors* neighbors = nullptr;  // set: replaces memory reads
};

struct EvalRow {
  std::string method;
  std::size_t k = 1;
  std::size_t memory_size = 0;
  std::vector<double> ade;  // one per horizon
  std::vector<double> fde;
};

struct EvalReport {
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::size_t samples = 0;
  std::size_t train_size = 0;
  std::vector<double> horizons_s;
  std::vector<EvalRow> rows;

  const EvalRow& row(const std::string& method, std::size_t k) const;
};

struct EvalOptions {
  std::vector<std::size_t> k_list{1, 5, 10, 20};
  std::vector<double> horizons_s{1.0, 2.0, 3.0, 4.0};
  bool baselines = true;
  KalmanOptions kalman;
  MlpOptions mlp;
  std::string method_name = "mantra";
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
};

// Per sample and horizon, best-of-K errors for every K in k_list, all read
// from the same ranked set of max(k_list) predictions in world coordinates.
struct SampleErrors {
  std::vector<std::vector<double>> ade;  // [k index][horizon index]
  std::vector<std::vector<double>> fde;
};

class MantraPredictor {
 public:
  explicit MantraPredictor(const MantraArtifacts& artifacts) : a_(artifacts) {}
  // Ranked world-frame futures for one sample.
  std::vector<Path> predict(const Sample& sample, std::size_t k);

 private:
  MantraArtifacts a_;
  std::map<std::string, FeatureMap> features_;
};

std::vector<SampleErrors> mantra_sample_errors(const MantraArtifacts& artifacts,
                                               std::span<const Sample> test,
                                               const WindowSpec& window,
                                               const EvalOptions& options);

// Rows for the MANTRA variant (one per K) and, with baselines enabled, for
// Kalman, Linear and MLP (K = 1). Errors are means over samples.
EvalReport evaluate(const MantraArtifacts& artifacts, std::span<const Sample> train,
                    std::span<const Sample> test, const WindowSpec& window,
                    const EvalOptions& options);

std::string format_report(const EvalReport& report);

// --- ablations --------------------------------------------------------------

struct AblationRow {
  std::string name;
  std::size_t memory_size = 0;
  double memory_fraction = 0.0;  // of the training set
  std::vector<double> fde;       // best-of-K per horizon
};

// Variants of one trained system: full, w/o refinement (the pretrained model
// before decoder finetuning, no refiner), w/o decoder (stored futures copied),
// w/o controller (write-all memory) and w/o encoder-decoder. Variants that
// need retraining are appended by the caller.
std::vector<AblationRow> ablation_matrix(const MantraArtifacts& full,
                                         const EncDecModel& pretrained,
                                         std::span<const Sample> train,
                                         std::span<const Sample> test, const WindowSpec& window,
                                         std::size_t k);
std::string format_ablations(std::span<const AblationRow> rows, std::uint64_t config_hash);

// --- online experiment --------------------------------------------------------

struct OnlineOptions {
  std::size_t batch = 50;
  std::size_t runs = 20;
  std::size_t k = 5;
  std::uint64_t seed = 0;
  WriteRule rule;
};

struct OnlinePoint {
  std::size_t observed = 0;  // stream samples ingested so far
  std::size_t memory_size = 0;
  double error = 0.0;  // mean best-of-K FDE at the horizon on the remainder
  std::size_t writes = 0;
};

struct OnlineCurve {
  std::vector<std::vector<OnlinePoint>> runs;
  std::vector<std::size_t> observed;
  std::vector<double> mean_memory;
  std::vector<double> mean_error;
  std::vector<double> error_variance;

  double write_fraction() const;
};

// Each run shuffles the stream with its own seed, starts from a copy of
// memory0, and repeatedly moves `batch` samples from the remainder into the
// memory through online_ingest, scoring the remainder after every batch.
OnlineCurve online_experiment(const EncDecModel& model, const Controller& controller,
                              const MemoryStore& memory0, std::span<const Sample> stream,
                              const OnlineOptions& options);

std::string format_online_curve(const OnlineCurve& curve, std::uint64_t config_hash);
std::string online_curve_svg(const OnlineCurve& curve);

}  // namespace mantra
