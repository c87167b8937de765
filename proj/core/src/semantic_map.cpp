#include "mantra/semantic_map.hpp"

#include <fmt/format.h>

#include <sstream>
#include <stdexcept>

#include "mantra/binary_io.hpp"

namespace mantra {

double SemanticMap::lookup(std::size_t channel, Vec2 world, double outside) const {
  const Vec2 c = to_cell(world);
  const double col = std::round(c.x), row = std::round(c.y);
  if (!(col >= 0.0 && row >= 0.0 && col < static_cast<double>(width) &&
        row < static_cast<double>(height))) {
    return outside;
  }
  return at(channel, static_cast<std::size_t>(row), static_cast<std::size_t>(col));
}

void SemanticMap::validate() const {
  if (!(resolution > 0.0)) throw std::invalid_argument("map resolution must be positive");
  if (channels == 0 || height == 0 || width == 0) {
    throw std::invalid_argument("map dimensions must be positive");
  }
  if (cells.size() != channels * height * width) {
    throw std::invalid_argument("map cell count does not match its dimensions");
  }
}

std::string format_map(const SemanticMap& map, std::string_view comment) {
  std::string out;
  if (!comment.empty()) out += fmt::format("# {}\n", comment);
  out += fmt::format("MAP {} {} {} {:.17g} {:.17g} {:.17g}\n", map.channels, map.height, map.width,
                     map.resolution, map.origin.x, map.origin.y);
  for (std::size_t ch = 0; ch < map.channels; ++ch) {
    for (std::size_t r = 0; r < map.height; ++r) {
      for (std::size_t c = 0; c < map.width; ++c) {
        if (c) out += ' ';
        out += fmt::format("{:.17g}", map.at(ch, r, c));
      }
      out += '\n';
    }
  }
  return out;
}

SemanticMap parse_map(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') break;
  }
  std::istringstream header(line);
  std::string tag;
  SemanticMap m;
  header >> tag >> m.channels >> m.height >> m.width >> m.resolution >> m.origin.x >> m.origin.y;
  if (tag != "MAP" || !header) throw FormatError("map: malformed header '" + line + "'");
  m.cells.resize(m.channels * m.height * m.width);
  for (std::size_t i = 0; i < m.cells.size(); ++i) {
    if (!(in >> m.cells[i])) {
      throw FormatError("map: truncated at cell " + std::to_string(i) + " of " +
                        std::to_string(m.cells.size()));
    }
  }
  m.validate();
  return m;
}

}  // namespace mantra
