#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "mantra/trajectory.hpp"

namespace mantra {

// Top-view class-indicator grid. Cell (r, c) is centred at world position
// origin + resolution * (c, r).
struct SemanticMap {
  static constexpr std::size_t kRoad = 0;
  static constexpr std::size_t kOffRoad = 1;

  std::size_t channels = 2;
  std::size_t height = 0;
  std::size_t width = 0;
  double resolution = 0.5;
  Vec2 origin;
  std::vector<double> cells;  // (channels, height, width) row-major

  double at(std::size_t channel, std::size_t row, std::size_t col) const {
    return cells[(channel * height + row) * width + col];
  }
  double& at(std::size_t channel, std::size_t row, std::size_t col) {
    return cells[(channel * height + row) * width + col];
  }
  // Continuous (column, row) cell coordinates of a world point.
  Vec2 to_cell(Vec2 world) const {
    return {(world.x - origin.x) / resolution, (world.y - origin.y) / resolution};
  }
  // Channel value of the cell containing `world`; `outside` when off the grid.
  double lookup(std::size_t channel, Vec2 world, double outside = 0.0) const;

  void validate() const;
};

// Text form: "MAP C H W resolution origin_x origin_y" then one line of W
// values per (channel, row), channel-major. Lines starting with '#' are
// comments.
std::string format_map(const SemanticMap& map, std::string_view comment = {});
SemanticMap parse_map(std::string_view text);

}  // namespace mantra
