#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mantra/autodiff.hpp"
#include "mantra/binary_io.hpp"
#include "mantra/layers.hpp"

namespace mantra {

// Binary parameter container:
//   "MANTRA1" | u64 config_hash | u64 record_count |
//   record_count x (u32 name_len, name, u32 rank, rank x u64 dim, f64 values...)
// All integers and floats little-endian.
struct Checkpoint {
  static constexpr std::string_view kMagic = "MANTRA1";

  std::uint64_t config_hash = 0;
  ParameterList tensors;

  void add(const std::string& name, const ad::Tensor& t) { tensors.push_back({name, t.detach()}); }
  void add_all(const ParameterList& params);
  bool contains(const std::string& name) const;
  const ad::Tensor& get(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// With `expected_hash`, a checkpoint stamped with a different config hash is
// rejected with a FormatError naming both values.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<std::uint64_t> expected_hash = std::nullopt);

void check_config_hash(std::string_view artifact, std::uint64_t expected, std::uint64_t found);

}  // namespace mantra
