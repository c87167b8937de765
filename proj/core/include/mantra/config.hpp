#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mantra/encdec.hpp"
#include "mantra/evaluation.hpp"
#include "mantra/refinement.hpp"
#include "mantra/synthetic.hpp"

namespace mantra {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string preset = "default";  // "default" (0.5 s) or "kitti-like" (0.1 s)

  // data
  double sample_period = 0.5;
  double past_seconds = 2.0;
  double future_seconds = 4.0;
  std::size_t straight_count = 20;
  std::size_t arc_count = 20;
  std::size_t junction_count = 20;
  std::size_t junction_branches = 2;
  double noise_sigma = 0.05;
  std::size_t extra_steps = 4;
  double test_fraction = 0.2;

  // model and training
  std::size_t past_hidden = 48;
  std::size_t future_hidden = 48;
  std::size_t decoder_hidden = 96;
  double learning_rate = 1e-4;
  std::size_t batch_size = 32;
  double grad_clip = 1.0;
  std::size_t pretrain_epochs = 5000;
  std::size_t patience = 200;
  double validation_fraction = 0.1;
  std::size_t controller_epochs = 200;
  double th_horizon = 2.0;
  std::size_t refine_epochs = 100;
  std::size_t refine_iterations = 4;
  bool learned_bridge = false;

  // ablations that change trained artifacts
  bool no_rotation_invariance = false;
  bool no_controller = false;

  // inference-time switches; no_refine scores the pretrained model without
  // the refiner
  bool no_refine = false;
  bool no_decoder = false;
  bool no_encdec = false;
  std::vector<std::size_t> k_list{1, 5, 10, 20};
  std::size_t online_batch = 50;
  std::size_t online_runs = 20;
  std::size_t mlp_epochs = 1000;
  double mlp_learning_rate = 1e-3;
  double kalman_sigma_q = 0.1;
  double kalman_sigma_r = 0.1;

  // locations
  std::filesystem::path out_dir = "run";
  std::filesystem::path data_dir;  // empty: <out_dir>/data

  // Applies one `key=value` assignment; throws ConfigError on an unknown key
  // or a malformed value.
  void set(std::string_view key, std::string_view value);
  // Throws ConfigError describing the first violated constraint.
  void validate() const;

  // Sorted key=value lines covering every field.
  std::string canonical_text() const;
  // FNV-1a over the canonical lines of the fields that shape trained
  // artifacts; inference-time switches and locations are left out so that
  // they can change without invalidating artifacts.
  std::uint64_t artifact_hash() const;

  WindowSpec window() const;
  SyntheticConfig synthetic() const;
  EncDecConfig encdec() const;
  TrainOptions pretrain_options() const;
  RefinementConfig refinement() const;
  std::filesystem::path data_path() const { return data_dir.empty() ? out_dir / "data" : data_dir; }
};

// Flat `key=value` text; blank lines and '#' comments are ignored. Errors
// name the offending line.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

}  // namespace mantra
