#include "xtransfer/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "xtransfer/digest.hpp"
#include "xtransfer/errors.hpp"

namespace xtransfer {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

namespace le {

void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), sizeof v); }
void put_u64(std::string& out, std::uint64_t v) { out.append(reinterpret_cast<const char*>(&v), sizeof v); }
void put_f32(std::string& out, float v) { out.append(reinterpret_cast<const char*>(&v), sizeof v); }
void put_f64(std::string& out, double v) { out.append(reinterpret_cast<const char*>(&v), sizeof v); }

std::string_view Reader::bytes(std::size_t n) {
  if (n > remaining()) throw IoError("truncated binary data");
  std::string_view v = data_.substr(pos_, n);
  pos_ += n;
  return v;
}

std::uint8_t Reader::u8() { return static_cast<std::uint8_t>(bytes(1)[0]); }

std::uint32_t Reader::u32() {
  std::uint32_t v;
  std::memcpy(&v, bytes(sizeof v).data(), sizeof v);
  return v;
}

std::uint64_t Reader::u64() {
  std::uint64_t v;
  std::memcpy(&v, bytes(sizeof v).data(), sizeof v);
  return v;
}

float Reader::f32() {
  float v;
  std::memcpy(&v, bytes(sizeof v).data(), sizeof v);
  return v;
}

double Reader::f64() {
  double v;
  std::memcpy(&v, bytes(sizeof v).data(), sizeof v);
  return v;
}

}  // namespace le

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

namespace {
constexpr std::string_view kMagic = "XTCONT01";
}

const Tensor& Container::tensor(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end() || !std::holds_alternative<Tensor>(it->second)) {
    throw CheckpointError("container: missing tensor entry '" + name + "'");
  }
  return std::get<Tensor>(it->second);
}

const std::vector<std::uint64_t>& Container::u64s(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end() || !std::holds_alternative<std::vector<std::uint64_t>>(it->second)) {
    throw CheckpointError("container: missing u64 entry '" + name + "'");
  }
  return std::get<std::vector<std::uint64_t>>(it->second);
}

const std::string& Container::bytes(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end() || !std::holds_alternative<Bytes>(it->second)) {
    throw CheckpointError("container: missing bytes entry '" + name + "'");
  }
  return std::get<Bytes>(it->second).data;
}

std::string Container::serialize() const {
  std::string out(kMagic);
  le::put_u32(out, kVersion);
  le::put_u32(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [name, entry] : entries_) {
    le::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    if (const auto* t = std::get_if<Tensor>(&entry)) {
      out.push_back(0);
      le::put_u64(out, t->rank());
      for (auto d : t->shape()) le::put_u64(out, d);
      for (double v : t->values()) le::put_f64(out, v);
    } else if (const auto* u = std::get_if<std::vector<std::uint64_t>>(&entry)) {
      out.push_back(1);
      le::put_u64(out, u->size());
      for (auto v : *u) le::put_u64(out, v);
    } else {
      const auto& b = std::get<Bytes>(entry).data;
      out.push_back(2);
      le::put_u64(out, b.size());
      out += b;
    }
  }
  out += sha256_hex(out);
  return out;
}

Container Container::parse(std::string_view data) {
  if (data.size() < kMagic.size() + 64 || data.substr(0, kMagic.size()) != kMagic) {
    throw CheckpointError("container: bad magic");
  }
  const std::string_view body = data.substr(0, data.size() - 64);
  if (sha256_hex(body) != data.substr(data.size() - 64)) throw CheckpointError("container: checksum mismatch");
  Container c;
  try {
    le::Reader r(body.substr(kMagic.size()));
    const auto version = r.u32();
    if (version != kVersion) {
      throw CheckpointError("container: unsupported version " + std::to_string(version));
    }
    const auto count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
      std::string name(r.bytes(r.u32()));
      const auto kind = r.u8();
      if (kind == 0) {
        const auto rank = r.u64();
        if (rank > 16) throw CheckpointError("container: implausible rank");
        Shape s(rank);
        for (auto& d : s) d = r.u64();
        const std::size_t n = shape_numel(s);
        if (n > r.remaining() / 8) throw CheckpointError("container: truncated tensor");
        std::vector<double> v(n);
        for (auto& x : v) x = r.f64();
        c.entries_[name] = Tensor(std::move(s), std::move(v));
      } else if (kind == 1) {
        const auto n = r.u64();
        if (n > r.remaining() / 8) throw CheckpointError("container: truncated array");
        std::vector<std::uint64_t> v(n);
        for (auto& x : v) x = r.u64();
        c.entries_[name] = std::move(v);
      } else if (kind == 2) {
        c.entries_[name] = Bytes{std::string(r.bytes(r.u64()))};
      } else {
        throw CheckpointError("container: unknown entry kind");
      }
    }
    if (r.remaining() != 0) throw CheckpointError("container: trailing bytes");
  } catch (const IoError& e) {
    throw CheckpointError(std::string("container: ") + e.what());
  }
  return c;
}

}  // namespace xtransfer
