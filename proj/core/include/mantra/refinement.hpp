#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mantra/autodiff.hpp"
#include "mantra/checkpoint.hpp"
#include "mantra/encdec.hpp"
#include "mantra/layers.hpp"
#include "mantra/memory.hpp"
#include "mantra/semantic_map.hpp"
#include "mantra/trajectory.hpp"

namespace mantra {

// CNN output over a semantic map plus the world -> grid transform.
// Feature cell (r, c) is centred at origin + cell_size * (c, r).
struct FeatureMap {
  ad::Tensor grid;  // (16, H', W')
  Vec2 origin;
  double cell_size = 1.0;

  std::size_t channels() const { return grid.dim(0); }
  std::size_t height() const { return grid.dim(1); }
  std::size_t width() const { return grid.dim(2); }
  Vec2 to_cell(Vec2 world) const {
    return {(world.x - origin.x) / cell_size, (world.y - origin.y) / cell_size};
  }
};

// Bilinear features at each world point; zero outside the grid.
std::vector<std::vector<double>> pool_features(const FeatureMap& features,
                                               std::span<const Vec2> world_points);

struct RefinementConfig {
  std::size_t map_channels = 2;
  std::size_t iterations = 4;
  std::size_t hidden = 48;
  // Canonical coordinates enter the GRU divided by this many metres.
  double coord_scale = 10.0;
  // Off: the GRU starts from pi itself. On: from a learned affine map of pi.
  bool learned_bridge = false;
};

// Refined futures for every iteration, world frame. `iterations.back()` is
// the final output; `iterations.size()` equals the configured count.
struct RefinementTrace {
  Path input;
  std::vector<Path> iterations;
  const Path& result() const { return iterations.empty() ? input : iterations.back(); }
};

class RefinementModel {
 public:
  static RefinementModel create(const RefinementConfig& config, std::uint64_t seed);

  const RefinementConfig& config() const { return config_; }

  // (1, C, H, W) map tensor -> (16, H', W') graph.
  ad::Tensor features(const ad::Tensor& map, ad::Mode mode);
  // Eval-mode feature map; throws std::invalid_argument on a channel mismatch
  // or a map smaller than one output cell.
  FeatureMap extract_feature_map(const SemanticMap& map) const;

  // Batched graph. x, y: (B, F) canonical coordinates; pi: (B, hidden).
  // Each iteration pools `grid` at the world position of every point and
  // adds the head's canonical offsets. Returns the final (x, y); intermediate
  // coordinates go to `trace` when given.
  std::pair<ad::Tensor, ad::Tensor> refine_batch(
      ad::Tensor x, ad::Tensor y, const ad::Tensor& pi,
      std::span<const NormalizationTransform> transforms, const ad::Tensor& grid, Vec2 origin,
      double cell_size, std::vector<std::pair<ad::Tensor, ad::Tensor>>* trace = nullptr) const;

  RefinementTrace refine(const Path& world_prediction, const NormalizationTransform& transform,
                         const PastEncoding& pi, const FeatureMap& features) const;

  ParameterList parameters() const;
  ParameterList buffers() const;
  void save_to(Checkpoint& ckpt) const;
  static RefinementModel load_from(const Checkpoint& ckpt, const RefinementConfig& config);
  RefinementModel clone() const;

  Conv2dLayer conv1;
  BatchNorm2d bn1;
  Conv2dLayer conv2;
  BatchNorm2d bn2;
  GruParams gru;  // input: 16 pooled features + 2 scaled coordinates
  Dense head;     // hidden -> 2, zero-initialized
  Dense bridge;   // hidden -> hidden, used only with learned_bridge

 private:
  RefinementConfig config_;
};

ad::Tensor map_tensor(const SemanticMap& map);

struct RefineTrainOptions {
  std::size_t epochs = 100;
  double learning_rate = 1e-4;
  double grad_clip = 1.0;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  bool finetune_decoder = true;
  // Skip the memory entry written from the sample itself when reading.
  bool exclude_own_entry = false;
  std::function<void(std::size_t, double, double)> on_epoch;
};

struct RefineTrainResult {
  std::vector<double> train_loss;
  std::vector<double> validation_loss;
  std::size_t best_epoch = 0;  // 0 = the untrained identity start
  double initial_loss = 0.0;   // first-step loss before any update
};

// Joint refinement training with decoder finetuning; encoders stay frozen.
// Every sample is predicted top-1 from memory (source id = index in
// `samples`). One optimizer step per semantic map per epoch over that map's
// samples. The kept parameters are those of the epoch with the lowest
// validation loss, the untrained start included.
RefineTrainResult train_refinement(RefinementModel& refiner, EncDecModel& model,
                                   std::span<const Sample> samples,
                                   const std::map<std::string, SemanticMap>& maps,
                                   const MemoryStore& memory, const RefineTrainOptions& options);

// Fraction of future points falling on off-road or unmapped cells.
double off_road_fraction(std::span<const Vec2> world_points, const SemanticMap& map);

}  // namespace mantra
