#include "mantra/binary_io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

namespace mantra {

void ByteWriter::f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }

double ByteReader::f64(std::string_view what) { return std::bit_cast<double>(get(8, what)); }

std::string ByteReader::bytes(std::size_t n, std::string_view what) {
  need(n, what);
  std::string s(reinterpret_cast<const char*>(data_.data() + offset_), n);
  offset_ += n;
  return s;
}

std::uint64_t ByteReader::get(int n, std::string_view what) {
  need(static_cast<std::size_t>(n), what);
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) {
    v |= static_cast<std::uint64_t>(data_[offset_ + static_cast<std::size_t>(i)]) << (8 * i);
  }
  offset_ += static_cast<std::size_t>(n);
  return v;
}

void ByteReader::need(std::size_t n, std::string_view what) const {
  if (data_.size() - offset_ < n) {
    std::ostringstream os;
    os << artifact_ << ": truncated at byte offset " << offset_ << " while reading " << what
       << " (need " << n << " bytes, " << data_.size() - offset_ << " left)";
    throw FormatError(os.str());
  }
}

void ByteReader::fail(std::string_view message) const {
  std::ostringstream os;
  os << artifact_ << ": " << message << " (byte offset " << offset_ << ")";
  throw FormatError(os.str());
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace mantra
