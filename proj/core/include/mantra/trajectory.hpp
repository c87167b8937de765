#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mantra {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2, Vec2) = default;
  double norm() const { return std::hypot(x, y); }
};

inline double distance(Vec2 a, Vec2 b) { return (a - b).norm(); }

// Counter-clockwise rotation by `angle` radians.
inline Vec2 rotate(Vec2 p, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * p.x - s * p.y, s * p.x + c * p.y};
}

using Path = std::vector<Vec2>;

struct TimedPoint {
  double t = 0.0;
  double x = 0.0;
  double y = 0.0;
};

struct Trajectory {
  std::string track_id;
  std::vector<TimedPoint> points;
  double sample_period = 0.5;

  // Throws std::invalid_argument unless timestamps increase with constant
  // spacing equal to sample_period (tolerance 1e-9).
  void validate() const;
  Path positions() const;
};

// canonical = rotate(world - translation, rotation)
struct NormalizationTransform {
  Vec2 translation;
  double rotation = 0.0;

  Vec2 to_canonical(Vec2 world) const { return rotate(world - translation, rotation); }
  Vec2 to_world(Vec2 canonical) const { return rotate(canonical, -rotation) + translation; }
};

Path denormalize(std::span<const Vec2> points, const NormalizationTransform& transform);
Path apply_transform(std::span<const Vec2> points, const NormalizationTransform& transform);

struct WindowSpec {
  double sample_period = 0.5;
  double past_seconds = 2.0;
  double future_seconds = 4.0;

  std::size_t past_len() const;
  std::size_t future_len() const;
  // Future step index (1-based) reached after `seconds`.
  std::size_t steps_for(double seconds) const;
};

struct Sample {
  Path past;    // canonical frame, past.back() == (0, 0)
  Path future;  // canonical frame
  NormalizationTransform transform;
  std::string track_id;
  std::string map_id;  // empty when no semantic map is attached
  std::size_t window_start = 0;
  bool stationary = false;

  Path world_past() const { return denormalize(past, transform); }
  Path world_future() const { return denormalize(future, transform); }
};

// Translates the present (last past point) to the origin and rotates the
// last non-zero past displacement onto +Y. A past with no motion gets
// rotation 0 and is flagged stationary. Requires at least two past points.
Sample normalize(std::span<const Vec2> raw_past, std::span<const Vec2> raw_future);

// Translation to the present, then the given rotation instead of the
// heading alignment.
Sample normalize_with_rotation(std::span<const Vec2> raw_past, std::span<const Vec2> raw_future,
                               double rotation);

// floor((N - P - F) / stride) + 1 windows, each normalized; empty when the
// trajectory is shorter than one window.
std::vector<Sample> sliding_window_chunks(const Trajectory& trajectory, const WindowSpec& spec,
                                          std::size_t stride_steps = 1);

// Scenario identifier encoded in a track id of the form "<scenario>.<branch>".
std::string scenario_of(const std::string& track_id);

}  // namespace mantra
