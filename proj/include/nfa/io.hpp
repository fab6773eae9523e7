#ifndef NFA_IO_HPP
#define NFA_IO_HPP

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nfa/error.hpp"

namespace nfa::io {

using Bytes = std::vector<std::uint8_t>;

Bytes read_file(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it into place, so a failed
// run never leaves a partial artifact behind.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

// Little-endian append helpers.
void put_u32(Bytes& out, std::uint32_t v);
void put_u64(Bytes& out, std::uint64_t v);
void put_f32(Bytes& out, float v);
void put_bytes(Bytes& out, std::string_view s);

/// Bounds-checked little-endian reader; errors name the offset and field.
class Reader {
 public:
  Reader(std::span<const std::uint8_t> data, std::string source) : data_(data), source_(std::move(source)) {}

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

  std::uint32_t u32(const char* field);
  std::uint32_t u32_be(const char* field);
  std::uint64_t u64(const char* field);
  float f32(const char* field);
  std::uint8_t u8(const char* field);
  std::string text(std::size_t n, const char* field);
  std::span<const std::uint8_t> raw(std::size_t n, const char* field);

 private:
  void need(std::size_t n, const char* field) const;

  std::span<const std::uint8_t> data_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace nfa::io

#endif  // NFA_IO_HPP
