#include "mantra/trajectory.hpp"

#include <numbers>
#include <stdexcept>

namespace mantra {

void Trajectory::validate() const {
  if (!(sample_period > 0.0)) throw std::invalid_argument("sample period must be positive");
  for (std::size_t i = 1; i < points.size(); ++i) {
    const double dt = points[i].t - points[i - 1].t;
    if (std::abs(dt - sample_period) > 1e-9) {
      throw std::invalid_argument("track " + track_id + ": timestamp spacing " +
                                  std::to_string(dt) + " at index " + std::to_string(i) +
                                  " differs from sample period " + std::to_string(sample_period));
    }
  }
}

Path Trajectory::positions() const {
  Path out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back({p.x, p.y});
  return out;
}

Path denormalize(std::span<const Vec2> points, const NormalizationTransform& transform) {
  Path out;
  out.reserve(points.size());
  for (auto p : points) out.push_back(transform.to_world(p));
  return out;
}

Path apply_transform(std::span<const Vec2> points, const NormalizationTransform& transform) {
  Path out;
  out.reserve(points.size());
  for (auto p : points) out.push_back(transform.to_canonical(p));
  return out;
}

std::size_t WindowSpec::past_len() const {
  return static_cast<std::size_t>(std::llround(past_seconds / sample_period));
}

std::size_t WindowSpec::future_len() const {
  return static_cast<std::size_t>(std::llround(future_seconds / sample_period));
}

std::size_t WindowSpec::steps_for(double seconds) const {
  return static_cast<std::size_t>(std::llround(seconds / sample_period));
}

namespace {

Sample build(std::span<const Vec2> raw_past, std::span<const Vec2> raw_future,
             NormalizationTransform transform) {
  Sample s;
  s.transform = transform;
  s.past = apply_transform(raw_past, transform);
  s.future = apply_transform(raw_future, transform);
  // Exact zero for the present regardless of rounding in the rotation.
  s.past.back() = {0.0, 0.0};
  return s;
}

}  // namespace

Sample normalize(std::span<const Vec2> raw_past, std::span<const Vec2> raw_future) {
  if (raw_past.size() < 2) {
    throw std::invalid_argument("normalize: past needs at least 2 points to define a heading");
  }
  NormalizationTransform t;
  t.translation = raw_past.back();
  bool stationary = true;
  for (std::size_t i = raw_past.size() - 1; i > 0; --i) {
    const Vec2 d = raw_past[i] - raw_past[i - 1];
    if (d.x != 0.0 || d.y != 0.0) {
      t.rotation = std::numbers::pi / 2.0 - std::atan2(d.y, d.x);
      if (t.rotation > std::numbers::pi) t.rotation -= 2.0 * std::numbers::pi;
      stationary = false;
      break;
    }
  }
  Sample s = build(raw_past, raw_future, t);
  s.stationary = stationary;
  return s;
}

Sample normalize_with_rotation(std::span<const Vec2> raw_past, std::span<const Vec2> raw_future,
                               double rotation) {
  if (raw_past.empty()) throw std::invalid_argument("normalize: empty past");
  Sample s = build(raw_past, raw_future, {raw_past.back(), rotation});
  bool moving = false;
  for (std::size_t i = 1; i < raw_past.size(); ++i) {
    moving = moving || !(raw_past[i] == raw_past[i - 1]);
  }
  s.stationary = !moving;
  return s;
}

std::vector<Sample> sliding_window_chunks(const Trajectory& trajectory, const WindowSpec& spec,
                                          std::size_t stride_steps) {
  if (stride_steps == 0) throw std::invalid_argument("stride must be positive");
  const std::size_t p = spec.past_len(), f = spec.future_len();
  const std::size_t n = trajectory.points.size();
  std::vector<Sample> out;
  if (n < p + f) return out;
  const Path pos = trajectory.positions();
  const std::string map_id = scenario_of(trajectory.track_id);
  for (std::size_t start = 0; start + p + f <= n; start += stride_steps) {
    const std::span<const Vec2> all(pos);
    Sample s = normalize(all.subspan(start, p), all.subspan(start + p, f));
    s.track_id = trajectory.track_id;
    s.map_id = map_id;
    s.window_start = start;
    out.push_back(std::move(s));
  }
  return out;
}

std::string scenario_of(const std::string& track_id) {
  const auto dot = track_id.find('.');
  return dot == std::string::npos ? track_id : track_id.substr(0, dot);
}

}  // namespace mantra
