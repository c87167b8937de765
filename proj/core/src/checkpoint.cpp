#include "mantra/checkpoint.hpp"

#include "mantra/binary_io.hpp"

namespace mantra {

void Checkpoint::add_all(const ParameterList& params) {
  for (const auto& p : params) add(p.name, p.tensor);
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

const ad::Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw FormatError("checkpoint has no tensor named '" + name + "'");
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.bytes(Checkpoint::kMagic);
  w.u64(ckpt.config_hash);
  w.u64(ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u64(d);
    for (double v : t.data()) w.f64(v);
  }
  return w.buffer();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "checkpoint");
  const std::string magic = r.bytes(Checkpoint::kMagic.size(), "magic");
  if (magic != Checkpoint::kMagic) {
    throw FormatError("checkpoint: bad magic, expected '" + std::string(Checkpoint::kMagic) +
                      "', found '" + magic + "'");
  }
  Checkpoint ckpt;
  ckpt.config_hash = r.u64("config hash");
  const std::uint64_t count = r.u64("record count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32("name length");
    std::string name = r.bytes(name_len, "tensor name");
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) r.fail("implausible rank " + std::to_string(rank) + " for " + name);
    ad::Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.u64("dimension");
      if (d == 0 || d > (1u << 28)) r.fail("implausible dimension in " + name);
      n *= d;
    }
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64("tensor values of " + name);
    ckpt.tensors.push_back({std::move(name), ad::Tensor::from(std::move(shape), std::move(values))});
  }
  if (!r.at_end()) r.fail("trailing bytes after last record");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<std::uint64_t> expected_hash) {
  Checkpoint ckpt = decode_checkpoint(read_file_bytes(path));
  if (expected_hash) check_config_hash(path.string(), *expected_hash, ckpt.config_hash);
  return ckpt;
}

void check_config_hash(std::string_view artifact, std::uint64_t expected, std::uint64_t found) {
  if (expected != found) {
    throw FormatError(std::string(artifact) + ": config hash mismatch, expected " +
                      hex64(expected) + ", found " + hex64(found));
  }
}

}  // namespace mantra
