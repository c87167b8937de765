#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mantra/synthetic.hpp"

namespace mantra {

// Track files hold one `track_id,t,x,y` record per line in decimal text,
// grouped by track in order of appearance. Lines starting with '#' carry
// metadata, e.g. "# config_hash=0123456789abcdef seed=7".
std::string format_tracks(const std::vector<Trajectory>& tracks, std::string_view comment = {});
std::vector<Trajectory> parse_tracks(std::string_view text, double sample_period);

// Value of `key=` inside the '#' metadata lines, if present.
std::optional<std::string> metadata_value(std::string_view text, std::string_view key);

// Layout: <dir>/train.csv, <dir>/test.csv, <dir>/maps/<scenario>.map. Track
// files carry "records=<n>" and are rejected on load when cut short.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds, std::uint64_t config_hash,
                  std::uint64_t seed);
Dataset load_dataset(const std::filesystem::path& dir, const WindowSpec& window,
                     std::optional<std::uint64_t> expected_hash = std::nullopt);

}  // namespace mantra
