#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mantra/semantic_map.hpp"
#include "mantra/trajectory.hpp"

namespace mantra {

enum class ScenarioKind { kStraight, kArc, kJunction };

struct SyntheticConfig {
  std::size_t straight_count = 20;
  std::size_t arc_count = 20;
  std::size_t junction_count = 20;

  double speed_min = 3.0;  // m/s
  double speed_max = 6.0;
  double noise_sigma = 0.05;  // m, i.i.d. per coordinate

  double sample_period = 0.5;
  double past_seconds = 2.0;
  double future_seconds = 4.0;
  std::size_t extra_steps = 4;  // track length is P + F + extra_steps points

  double yaw_rate_min = 0.1;  // rad/s, arcs turn left or right at random
  double yaw_rate_max = 0.35;

  std::size_t junction_branches = 2;  // 2: left/right, 3: left/straight/right
  double branch_probability = 0.5;    // probability of branch 0 (left)
  bool emit_all_branches = false;     // one track per branch with a shared past
  double turn_radius = 10.0;          // m
  std::size_t max_turn_delay = 2;     // turn starts 0..max steps after the present

  double road_half_width = 3.5;
  double map_resolution = 0.5;
  double map_margin = 6.0;
  bool with_maps = true;

  double test_fraction = 0.2;  // by scenario
  double world_extent = 100.0;  // start positions drawn in [-extent, extent]^2

  // Throws std::invalid_argument describing the first invalid field.
  void validate() const;
};

struct ScenarioInfo {
  std::string id;
  ScenarioKind kind = ScenarioKind::kStraight;
  double speed = 0.0;
  std::vector<std::size_t> branches;  // branches emitted for junctions
  bool test = false;
};

struct Dataset {
  WindowSpec window;
  std::vector<Trajectory> train;
  std::vector<Trajectory> test;
  std::map<std::string, SemanticMap> maps;  // keyed by scenario id
  std::vector<ScenarioInfo> scenarios;
};

Dataset generate_synthetic_dataset(const SyntheticConfig& config, std::uint64_t seed);

// Piecewise constant-curvature path description.
struct PathSegment {
  double length = 0.0;  // m; use a large value for an open-ended segment
  double curvature = 0.0;  // 1/m, positive turns left
};

// World position after travelling `s` metres along the segments from the
// given start pose.
Vec2 point_along(const std::vector<PathSegment>& segments, Vec2 start, double heading, double s);

struct MotionMode {
  double speed = 5.0;
  double yaw_rate = 0.0;
};

// `copies` noisy tracks of exactly P + F points per mode, each with a random
// start position and heading. Used for redundancy experiments.
std::vector<Trajectory> motion_mode_tracks(const std::vector<MotionMode>& modes,
                                           std::size_t copies, double noise_sigma,
                                           const WindowSpec& window, std::uint64_t seed);

std::vector<Sample> chunk_all(const std::vector<Trajectory>& tracks, const WindowSpec& window,
                              std::size_t stride_steps = 1);

}  // namespace mantra
