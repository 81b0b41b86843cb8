#pragma once

// Named-entry binary container used for toy encoder weights and engine
// checkpoints.
//
// Layout (all integers little-endian):
//   "XTCONT01"                      8-byte magic
//   u32 format version, u32 entry count
//   per entry, in name order:
//     u32 name length, name bytes, u8 kind (0 f64 tensor, 1 u64 array, 2 bytes)
//     f64 tensor: u64 rank, u64 dims..., f64 values
//     u64 array:  u64 count, u64 values
//     bytes:      u64 length, raw bytes
//   SHA-256 of everything above as 64 hex chars

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "xtransfer/tensor.hpp"

namespace xtransfer {

namespace le {
void put_u32(std::string& out, std::uint32_t v);
void put_u64(std::string& out, std::uint64_t v);
void put_f32(std::string& out, float v);
void put_f64(std::string& out, double v);

// Bounds-checked reader over a byte buffer.
class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string_view bytes(std::size_t n);
  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};
}  // namespace le

// Write `bytes` to a sibling temp file and rename over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

class Container {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void put(const std::string& name, Tensor t) { entries_[name] = std::move(t); }
  void put_u64(const std::string& name, std::vector<std::uint64_t> v) { entries_[name] = std::move(v); }
  void put_bytes(const std::string& name, std::string b) { entries_[name] = Bytes{std::move(b)}; }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }
  const Tensor& tensor(const std::string& name) const;
  const std::vector<std::uint64_t>& u64s(const std::string& name) const;
  const std::string& bytes(const std::string& name) const;

  std::string serialize() const;
  static Container parse(std::string_view data);

  void write(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }
  static Container read(const std::filesystem::path& path) { return parse(read_file(path)); }

 private:
  struct Bytes {
    std::string data;
  };
  using Entry = std::variant<Tensor, std::vector<std::uint64_t>, Bytes>;
  std::map<std::string, Entry> entries_;
};

}  // namespace xtransfer
