#pragma once

// Perturbation artifacts and the zoo index.
//
// An artifact is a JSON metadata file plus one binary payload per tensor. A
// payload is "XTTENS01", u64 rank, u64 dims, then float32 values, all
// little-endian and row-major. The metadata is stored in canonical form (keys
// sorted, two-space indent) and carries SHA-256 digests of every payload and of
// its own canonical text with the "digest" member removed.

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xtransfer/core.hpp"

namespace xtransfer {

inline constexpr int kArtifactFormatVersion = 1;
inline constexpr char kPayloadMagic[9] = "XTTENS01";

struct ArtifactDescriptor {
  std::string path;  // metadata file, relative to the index directory or absolute
  std::string url;   // optional remote location of the metadata file
  int format_version = kArtifactFormatVersion;
  std::string digest;
  nlohmann::json summary = nlohmann::json::object();
  friend bool operator==(const ArtifactDescriptor&, const ArtifactDescriptor&) = default;
};

void to_json(nlohmann::json& j, const ArtifactDescriptor& d);
void from_json(const nlohmann::json& j, ArtifactDescriptor& d);

// "<kind>_targeted" or "<kind>_non_targeted".
std::string threat_model_key(const Perturbation& p);

std::string encode_payload(const FloatTensor& t);
FloatTensor decode_payload(std::string_view bytes);

// Canonical metadata text and its digest (the "digest" member is ignored).
std::string canonical_metadata(const nlohmann::json& meta);
std::string metadata_digest(const nlohmann::json& meta);

// Writes `<stem>.json` and `<stem>.<tensor>.bin` next to `meta_path`.
ArtifactDescriptor save_perturbation(const Perturbation& p, const std::filesystem::path& meta_path,
                                     const nlohmann::json& summary = nlohmann::json::object());
// Verifies payload and metadata digests (and `expected_digest` when given) and
// the threat-model invariants.
Perturbation load_perturbation(const std::filesystem::path& meta_path,
                               const std::optional<std::string>& expected_digest = std::nullopt);

class ZooIndex {
 public:
  ZooIndex() = default;
  static ZooIndex load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::vector<std::string> list_threat_models() const;
  std::vector<std::string> list_attackers(const std::string& threat_model) const;
  const ArtifactDescriptor& descriptor(const std::string& threat_model, const std::string& id) const;
  void add(const std::string& threat_model, const std::string& id, ArtifactDescriptor d);

  // Resolves, fetches when URL-backed, verifies and returns the perturbation.
  Perturbation load_attacker(const std::string& threat_model, const std::string& id) const;

  const std::filesystem::path& base_dir() const { return base_dir_; }
  void set_base_dir(std::filesystem::path dir) { base_dir_ = std::move(dir); }

 private:
  std::filesystem::path base_dir_;
  std::map<std::string, std::map<std::string, ArtifactDescriptor>> entries_;
};

// Callable wrapper: rescales to the batch resolution and applies.
using Attacker = std::function<ImageBatch(const ImageBatch&)>;
Attacker make_attacker(Perturbation p);

// Converter stub for third-party UAPs: reads a raw little-endian float32
// [3,H,W] Linf delta and checks it against `epsilon`.
Perturbation ingest_raw_linf(const std::filesystem::path& raw, Resolution res, double epsilon);

// Downloads http(s) URLs into `cache_dir`; returns the local path.
std::filesystem::path fetch_url(const std::string& url, const std::filesystem::path& cache_dir);

}  // namespace xtransfer
