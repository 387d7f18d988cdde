#include "fccnn/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "fccnn/error.hpp"

namespace fccnn::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace {

template <typename T>
void append_raw(std::vector<char>& out, T value) {
  char raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

}  // namespace

void ByteWriter::put_bytes(std::string_view bytes) {
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}
void ByteWriter::put_u32(std::uint32_t v) { append_raw(buffer_, v); }
void ByteWriter::put_i32(std::int32_t v) { append_raw(buffer_, v); }
void ByteWriter::put_f64(double v) { append_raw(buffer_, v); }

void ByteWriter::save(const std::filesystem::path& path) const { write_file(path, buffer_); }

ByteReader ByteReader::from_file(const std::filesystem::path& path) {
  return ByteReader(read_file(path));
}

void ByteReader::require(std::size_t n, std::string_view what) const {
  if (remaining() < n) {
    throw FormatError("truncated data while reading " + std::string(what), pos_);
  }
}

std::string ByteReader::get_bytes(std::size_t n) {
  require(n, "byte string");
  std::string s(buffer_.data() + pos_, n);
  pos_ += n;
  return s;
}

std::uint32_t ByteReader::get_u32() {
  require(4, "u32");
  std::uint32_t v;
  std::memcpy(&v, buffer_.data() + pos_, 4);
  pos_ += 4;
  return v;
}

std::int32_t ByteReader::get_i32() {
  require(4, "i32");
  std::int32_t v;
  std::memcpy(&v, buffer_.data() + pos_, 4);
  pos_ += 4;
  return v;
}

double ByteReader::get_f64() {
  require(8, "f64");
  double v;
  std::memcpy(&v, buffer_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw InvalidArgument("cannot open file: " + path.string());
  }
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw InvalidArgument("cannot open file for writing: " + path.string());
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw InvalidArgument("write failed: " + path.string());
  }
}

}  // namespace fccnn::io
