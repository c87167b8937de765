#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mantra {

// Malformed, truncated, or mismatched artifact.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Little-endian encoder.
class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void i64(std::int64_t v) { put(static_cast<std::uint64_t>(v), 8); }
  void f64(double v);
  const std::vector<std::uint8_t>& buffer() const { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

// Little-endian decoder that reports the byte offset of any truncation.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, std::string artifact)
      : data_(data), artifact_(std::move(artifact)) {}

  std::string bytes(std::size_t n, std::string_view what);
  std::uint32_t u32(std::string_view what) { return static_cast<std::uint32_t>(get(4, what)); }
  std::uint64_t u64(std::string_view what) { return get(8, what); }
  std::int64_t i64(std::string_view what) { return static_cast<std::int64_t>(get(8, what)); }
  double f64(std::string_view what);

  std::size_t offset() const { return offset_; }
  bool at_end() const { return offset_ == data_.size(); }
  [[noreturn]] void fail(std::string_view message) const;

 private:
  std::uint64_t get(int n, std::string_view what);
  void need(std::size_t n, std::string_view what) const;

  std::span<const std::uint8_t> data_;
  std::string artifact_;
  std::size_t offset_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

std::string hex64(std::uint64_t v);

}  // namespace mantra
