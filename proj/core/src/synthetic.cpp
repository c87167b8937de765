#include "mantra/synthetic.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

#include "mantra/layers.hpp"

namespace mantra {

namespace {

constexpr double kOpenEnded = 1e6;
constexpr double kCenterlineStep = 0.25;

struct Branch {
  std::vector<PathSegment> segments;
};

double uniform(Rng& rng, double lo, double hi) {
  return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
}

Trajectory sample_track(std::string id, const std::vector<PathSegment>& segments, Vec2 start,
                        double heading, double speed, double period, std::size_t n_points,
                        const std::vector<Vec2>& noise) {
  Trajectory t;
  t.track_id = std::move(id);
  t.sample_period = period;
  t.points.reserve(n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    const double time = static_cast<double>(i) * period;
    const Vec2 p = point_along(segments, start, heading, speed * time) + noise[i];
    t.points.push_back({time, p.x, p.y});
  }
  return t;
}

SemanticMap rasterize(const std::vector<Path>& centerlines, const SyntheticConfig& cfg) {
  double min_x = std::numeric_limits<double>::infinity(), min_y = min_x;
  double max_x = -min_x, max_y = -min_x;
  for (const auto& line : centerlines) {
    for (auto p : line) {
      min_x = std::min(min_x, p.x);
      min_y = std::min(min_y, p.y);
      max_x = std::max(max_x, p.x);
      max_y = std::max(max_y, p.y);
    }
  }
  const double pad = cfg.road_half_width + cfg.map_margin;
  SemanticMap m;
  m.channels = 2;
  m.resolution = cfg.map_resolution;
  m.origin = {std::floor((min_x - pad) / m.resolution) * m.resolution,
              std::floor((min_y - pad) / m.resolution) * m.resolution};
  m.width = static_cast<std::size_t>(std::ceil((max_x + pad - m.origin.x) / m.resolution)) + 1;
  m.height = static_cast<std::size_t>(std::ceil((max_y + pad - m.origin.y) / m.resolution)) + 1;
  m.cells.assign(m.channels * m.height * m.width, 0.0);
  const double r2 = cfg.road_half_width * cfg.road_half_width;
  for (std::size_t row = 0; row < m.height; ++row) {
    for (std::size_t col = 0; col < m.width; ++col) {
      const Vec2 c{m.origin.x + static_cast<double>(col) * m.resolution,
                   m.origin.y + static_cast<double>(row) * m.resolution};
      bool road = false;
      for (const auto& line : centerlines) {
        for (auto p : line) {
          const double dx = p.x - c.x, dy = p.y - c.y;
          if (dx * dx + dy * dy <= r2) {
            road = true;
            break;
          }
        }
        if (road) break;
      }
      m.at(SemanticMap::kRoad, row, col) = road ? 1.0 : 0.0;
      m.at(SemanticMap::kOffRoad, row, col) = road ? 0.0 : 1.0;
    }
  }
  return m;
}

Path centerline(const std::vector<PathSegment>& segments, Vec2 start, double heading,
                double from, double to) {
  Path out;
  for (double s = from; s <= to; s += kCenterlineStep) {
    out.push_back(point_along(segments, start, heading, s));
  }
  return out;
}

}  // namespace

void SyntheticConfig::validate() const {
  if (straight_count + arc_count + junction_count == 0) {
    throw std::invalid_argument("synthetic config: at least one scenario is required");
  }
  if (!(speed_min >= 0.0) || !(speed_max >= speed_min)) {
    throw std::invalid_argument("synthetic config: speeds must satisfy 0 <= speed_min <= speed_max");
  }
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("synthetic config: noise_sigma < 0");
  if (!(sample_period > 0.0) || !(past_seconds > 0.0) || !(future_seconds > 0.0)) {
    throw std::invalid_argument("synthetic config: time spans must be positive");
  }
  if (junction_branches < 2 || junction_branches > 3) {
    throw std::invalid_argument("synthetic config: junction_branches must be 2 or 3");
  }
  if (!(branch_probability >= 0.0 && branch_probability <= 1.0)) {
    throw std::invalid_argument("synthetic config: branch_probability outside [0, 1]");
  }
  if (!(yaw_rate_min >= 0.0) || !(yaw_rate_max >= yaw_rate_min)) {
    throw std::invalid_argument("synthetic config: invalid yaw rate range");
  }
  if (!(turn_radius > 0.0) || !(road_half_width > 0.0) || !(map_resolution > 0.0)) {
    throw std::invalid_argument("synthetic config: geometry values must be positive");
  }
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("synthetic config: test_fraction must be in [0, 1)");
  }
}

Vec2 point_along(const std::vector<PathSegment>& segments, Vec2 start, double heading, double s) {
  Vec2 p = start;
  double theta = heading;
  for (const auto& seg : segments) {
    const double d = std::min(s, seg.length);
    if (std::abs(seg.curvature) < 1e-12) {
      p = p + d * Vec2{std::cos(theta), std::sin(theta)};
    } else {
      const double k = seg.curvature;
      p = p + (1.0 / k) * Vec2{std::sin(theta + k * d) - std::sin(theta),
                               std::cos(theta) - std::cos(theta + k * d)};
      theta += k * d;
    }
    s -= d;
    if (s <= 0.0) break;
  }
  return p;
}

Dataset generate_synthetic_dataset(const SyntheticConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Dataset ds;
  ds.window = {cfg.sample_period, cfg.past_seconds, cfg.future_seconds};
  const std::size_t p_len = ds.window.past_len(), f_len = ds.window.future_len();
  const std::size_t n_points = p_len + f_len + cfg.extra_steps;
  const double duration = static_cast<double>(n_points - 1) * cfg.sample_period;

  Rng rng(seed);
  std::normal_distribution<double> noise_dist(0.0, 1.0);
  std::bernoulli_distribution split(cfg.test_fraction);

  std::vector<ScenarioKind> kinds;
  kinds.insert(kinds.end(), cfg.straight_count, ScenarioKind::kStraight);
  kinds.insert(kinds.end(), cfg.arc_count, ScenarioKind::kArc);
  kinds.insert(kinds.end(), cfg.junction_count, ScenarioKind::kJunction);

  for (std::size_t si = 0; si < kinds.size(); ++si) {
    ScenarioInfo info;
    info.id = fmt::format("s{:05d}", si);
    info.kind = kinds[si];
    info.speed = uniform(rng, cfg.speed_min, cfg.speed_max);
    const Vec2 start{uniform(rng, -cfg.world_extent, cfg.world_extent),
                     uniform(rng, -cfg.world_extent, cfg.world_extent)};
    const double heading = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    std::vector<Vec2> noise(n_points);
    for (auto& n : noise) {
      // Drawn even when sigma is zero so streams stay aligned across configs.
      const double nx = noise_dist(rng), ny = noise_dist(rng);
      n = {cfg.noise_sigma * nx, cfg.noise_sigma * ny};
    }

    std::vector<Branch> branches;
    switch (info.kind) {
      case ScenarioKind::kStraight:
        branches.push_back({{{kOpenEnded, 0.0}}});
        break;
      case ScenarioKind::kArc: {
        const double yaw = uniform(rng, cfg.yaw_rate_min, cfg.yaw_rate_max);
        const double sign = std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0;
        const double kappa = info.speed > 0.0 ? sign * yaw / info.speed : 0.0;
        branches.push_back({{{kOpenEnded, kappa}}});
        break;
      }
      case ScenarioKind::kJunction: {
        const auto delay = std::uniform_int_distribution<std::size_t>(0, cfg.max_turn_delay)(rng);
        const double approach =
            info.speed * cfg.sample_period * static_cast<double>(p_len - 1 + delay);
        const double quarter = cfg.turn_radius * std::numbers::pi / 2.0;
        const double k = 1.0 / cfg.turn_radius;
        auto turn = [&](double curvature) {
          return Branch{{{approach, 0.0}, {quarter, curvature}, {kOpenEnded, 0.0}}};
        };
        if (cfg.junction_branches == 2) {
          branches = {turn(k), turn(-k)};
        } else {
          branches = {turn(k), turn(0.0), turn(-k)};
        }
        break;
      }
    }

    std::vector<std::size_t> emitted;
    if (info.kind == ScenarioKind::kJunction && !cfg.emit_all_branches) {
      std::size_t b = 0;
      if (!std::bernoulli_distribution(cfg.branch_probability)(rng)) {
        b = branches.size() == 2
                ? 1
                : std::uniform_int_distribution<std::size_t>(1, branches.size() - 1)(rng);
      }
      emitted.push_back(b);
    } else {
      for (std::size_t b = 0; b < branches.size(); ++b) emitted.push_back(b);
    }
    info.branches = emitted;
    info.test = split(rng);

    auto& bucket = info.test ? ds.test : ds.train;
    for (auto b : emitted) {
      bucket.push_back(sample_track(fmt::format("{}.{}", info.id, b), branches[b].segments, start,
                                    heading, info.speed, cfg.sample_period, n_points, noise));
    }
    if (cfg.with_maps) {
      std::vector<Path> lines;
      const double travel = info.speed * duration;
      for (const auto& br : branches) {
        lines.push_back(centerline(br.segments, start, heading, 0.0, travel + cfg.map_margin));
      }
      ds.maps.emplace(info.id, rasterize(lines, cfg));
    }
    ds.scenarios.push_back(std::move(info));
  }
  return ds;
}

std::vector<Trajectory> motion_mode_tracks(const std::vector<MotionMode>& modes,
                                           std::size_t copies, double noise_sigma,
                                           const WindowSpec& window, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> noise_dist(0.0, 1.0);
  const std::size_t n_points = window.past_len() + window.future_len();
  std::vector<Trajectory> out;
  for (std::size_t m = 0; m < modes.size(); ++m) {
    const auto& mode = modes[m];
    const double kappa = mode.speed > 0.0 ? mode.yaw_rate / mode.speed : 0.0;
    for (std::size_t c = 0; c < copies; ++c) {
      const Vec2 start{uniform(rng, -100.0, 100.0), uniform(rng, -100.0, 100.0)};
      const double heading = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      std::vector<Vec2> noise(n_points);
      for (auto& n : noise) {
        const double nx = noise_dist(rng), ny = noise_dist(rng);
        n = {noise_sigma * nx, noise_sigma * ny};
      }
      out.push_back(sample_track(fmt::format("m{:03d}.{}", m, c), {{kOpenEnded, kappa}}, start,
                                 heading, mode.speed, window.sample_period, n_points, noise));
    }
  }
  return out;
}

std::vector<Sample> chunk_all(const std::vector<Trajectory>& tracks, const WindowSpec& window,
                              std::size_t stride_steps) {
  std::vector<Sample> out;
  for (const auto& t : tracks) {
    auto chunk = sliding_window_chunks(t, window, stride_steps);
    out.insert(out.end(), std::make_move_iterator(chunk.begin()),
               std::make_move_iterator(chunk.end()));
  }
  return out;
}

}  // namespace mantra
