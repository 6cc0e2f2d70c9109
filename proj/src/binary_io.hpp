#pragma once

#include "diffal/errors.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

namespace diffal::detail {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

class ByteWriter {
 public:
  void magic(const char (&tag)[5]) { bytes_.insert(bytes_.end(), tag, tag + 4); }

  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }

  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string format)
      : bytes_(bytes), format_(std::move(format)) {}

  void expect_magic(const char (&tag)[5]) {
    require(4, "magic");
    if (std::memcmp(bytes_.data(), tag, 4) != 0) {
      throw FormatError(format_ + ": bad magic at byte offset 0");
    }
    offset_ = 4;
  }

  template <typename T>
  T get(const char* what) {
    require(sizeof(T), what);
    T value;
    std::memcpy(&value, bytes_.data() + offset_, sizeof(T));
    offset_ += sizeof(T);
    return value;
  }

  void require(std::size_t n, const char* what) const {
    if (bytes_.size() - offset_ < n) {
      throw FormatError(format_ + ": truncated payload reading " + what + " at byte offset " +
                        std::to_string(offset_) + " (file has " + std::to_string(bytes_.size()) +
                        " bytes)");
    }
  }

  std::size_t offset() const { return offset_; }
  std::size_t remaining() const { return bytes_.size() - offset_; }
  const std::string& format() const { return format_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::string format_;
  std::size_t offset_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace diffal::detail
