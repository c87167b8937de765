#include "mantra/dataset_io.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <sstream>
#include <unordered_map>

#include "mantra/binary_io.hpp"
#include "mantra/checkpoint.hpp"

namespace mantra {

namespace {

double parse_double(std::string_view s, std::size_t line_no) {
  // std::from_chars for double is available in libstdc++ 11.
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError("tracks: invalid number '" + std::string(s) + "' on line " +
                      std::to_string(line_no));
  }
  return v;
}

std::string file_comment(std::uint64_t hash, std::uint64_t seed) {
  return fmt::format("config_hash={} seed={}", hex64(hash), seed);
}

std::size_t record_count(const std::vector<Trajectory>& tracks) {
  std::size_t n = 0;
  for (const auto& t : tracks) n += t.points.size();
  return n;
}

// Files written by save_dataset declare their record count; a mismatch or a
// missing final newline means the file was cut short.
void check_complete(const std::filesystem::path& path, std::string_view text,
                    const std::vector<Trajectory>& tracks) {
  const auto declared = metadata_value(text, "records");
  if (!declared) return;
  if (text.empty() || text.back() != '\n' || std::to_string(record_count(tracks)) != *declared) {
    throw FormatError(fmt::format("{}: truncated, expected {} records, found {}", path.string(),
                                  *declared, record_count(tracks)));
  }
}

}  // namespace

std::string format_tracks(const std::vector<Trajectory>& tracks, std::string_view comment) {
  std::string out;
  if (!comment.empty()) out += fmt::format("# {}\n", comment);
  for (const auto& t : tracks) {
    for (const auto& p : t.points) {
      out += fmt::format("{},{:.17g},{:.17g},{:.17g}\n", t.track_id, p.t, p.x, p.y);
    }
  }
  return out;
}

std::vector<Trajectory> parse_tracks(std::string_view text, double sample_period) {
  std::vector<Trajectory> tracks;
  std::unordered_map<std::string, std::size_t> index;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    std::string_view fields[4];
    std::size_t start = 0;
    for (int f = 0; f < 4; ++f) {
      const auto comma = f < 3 ? line.find(',', start) : std::string_view::npos;
      if (f < 3 && comma == std::string_view::npos) {
        throw FormatError("tracks: expected 4 comma-separated fields on line " +
                          std::to_string(line_no));
      }
      fields[f] = line.substr(start, f < 3 ? comma - start : std::string_view::npos);
      start = comma + 1;
    }
    const std::string id(fields[0]);
    auto [it, inserted] = index.emplace(id, tracks.size());
    if (inserted) {
      tracks.push_back({});
      tracks.back().track_id = id;
      tracks.back().sample_period = sample_period;
    }
    tracks[it->second].points.push_back({parse_double(fields[1], line_no),
                                         parse_double(fields[2], line_no),
                                         parse_double(fields[3], line_no)});
  }
  for (const auto& t : tracks) t.validate();
  return tracks;
}

std::optional<std::string> metadata_value(std::string_view text, std::string_view key) {
  std::size_t pos = 0;
  const std::string needle = std::string(key) + "=";
  while (pos < text.size() && text[pos] == '#') {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    const auto k = line.find(needle);
    if (k != std::string_view::npos) {
      const auto v = k + needle.size();
      const auto stop = line.find(' ', v);
      return std::string(line.substr(v, stop == std::string_view::npos ? stop : stop - v));
    }
    pos = end + 1;
  }
  return std::nullopt;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& ds, std::uint64_t config_hash,
                  std::uint64_t seed) {
  const std::string comment = file_comment(config_hash, seed);
  write_text_file(dir / "train.csv",
                  format_tracks(ds.train, fmt::format("{} records={}", comment,
                                                      record_count(ds.train))));
  write_text_file(dir / "test.csv",
                  format_tracks(ds.test, fmt::format("{} records={}", comment,
                                                     record_count(ds.test))));
  for (const auto& [id, map] : ds.maps) {
    write_text_file(dir / "maps" / (id + ".map"), format_map(map, comment));
  }
}

Dataset load_dataset(const std::filesystem::path& dir, const WindowSpec& window,
                     std::optional<std::uint64_t> expected_hash) {
  Dataset ds;
  ds.window = window;
  for (const char* split : {"train", "test"}) {
    const auto path = dir / (std::string(split) + ".csv");
    const std::string text = read_text_file(path);
    if (expected_hash) {
      const auto found = metadata_value(text, "config_hash");
      if (!found) throw FormatError(path.string() + ": missing config_hash metadata");
      check_config_hash(path.string(), *expected_hash, std::stoull(*found, nullptr, 16));
    }
    auto& tracks = std::string_view(split) == "train" ? ds.train : ds.test;
    tracks = parse_tracks(text, window.sample_period);
    check_complete(path, text, tracks);
  }
  const auto maps_dir = dir / "maps";
  if (std::filesystem::exists(maps_dir)) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(maps_dir)) {
      if (e.path().extension() == ".map") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) ds.maps.emplace(f.stem().string(), parse_map(read_text_file(f)));
  }
  return ds;
}

}  // namespace mantra
