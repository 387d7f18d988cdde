#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace fccnn::io {

/// Append-only little-endian byte buffer.
class ByteWriter {
 public:
  void put_bytes(std::string_view bytes);
  void put_u32(std::uint32_t v);
  void put_i32(std::int32_t v);
  void put_f64(double v);

  const std::vector<char>& bytes() const noexcept { return buffer_; }
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<char> buffer_;
};

/// Bounds-checked little-endian reader. Every failure throws FormatError
/// with the offset of the read that could not be satisfied.
class ByteReader {
 public:
  explicit ByteReader(std::vector<char> bytes) : buffer_(std::move(bytes)) {}
  static ByteReader from_file(const std::filesystem::path& path);

  std::string get_bytes(std::size_t n);
  std::uint32_t get_u32();
  std::int32_t get_i32();
  double get_f64();

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return buffer_.size() - pos_; }

 private:
  void require(std::size_t n, std::string_view what) const;

  std::vector<char> buffer_;
  std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<char>& bytes);

}  // namespace fccnn::io
