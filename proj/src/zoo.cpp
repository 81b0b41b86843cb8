#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "xtransfer/zoo.hpp"

#include <cmath>
#include <regex>

#include "xtransfer/container.hpp"
#include "xtransfer/digest.hpp"
#include "xtransfer/errors.hpp"

namespace xtransfer {

using nlohmann::json;

void to_json(json& j, const ArtifactDescriptor& d) {
  j = json{{"path", d.path}, {"format_version", d.format_version}, {"digest", d.digest}, {"summary", d.summary}};
  if (!d.url.empty()) j["url"] = d.url;
}

void from_json(const json& j, ArtifactDescriptor& d) {
  d.path = j.value("path", "");
  d.url = j.value("url", "");
  if (d.path.empty() && d.url.empty()) throw ValidationError("artifact descriptor needs a path or url");
  d.format_version = j.at("format_version").get<int>();
  d.digest = j.at("digest").get<std::string>();
  d.summary = j.value("summary", json::object());
}

std::string threat_model_key(const Perturbation& p) {
  return to_string(p.threat_model.kind) + (p.targeted ? "_targeted" : "_non_targeted");
}

std::string encode_payload(const FloatTensor& t) {
  if (shape_numel(t.shape) != t.values.size()) throw ShapeError("payload shape does not match value count");
  std::string out(kPayloadMagic, 8);
  le::put_u64(out, t.shape.size());
  for (auto d : t.shape) le::put_u64(out, d);
  out.reserve(out.size() + 4 * t.values.size());
  for (float v : t.values) le::put_f32(out, v);
  return out;
}

FloatTensor decode_payload(std::string_view bytes) {
  le::Reader r(bytes);
  if (r.bytes(8) != std::string_view(kPayloadMagic, 8)) throw IoError("payload: bad magic");
  const std::uint64_t rank = r.u64();
  if (rank > 8) throw IoError("payload: implausible rank " + std::to_string(rank));
  FloatTensor t;
  std::uint64_t n = 1;
  for (std::uint64_t i = 0; i < rank; ++i) {
    const std::uint64_t d = r.u64();
    if (d != 0 && n > (std::uint64_t{1} << 40) / d) throw IoError("payload: dimensions overflow");
    n *= d;
    t.shape.push_back(static_cast<std::size_t>(d));
  }
  if (r.remaining() != 4 * n) throw IoError("payload: size does not match its shape");
  t.values.resize(n);
  for (auto& v : t.values) v = r.f32();
  return t;
}

std::string canonical_metadata(const json& meta) {
  json m = meta;
  m.erase("digest");
  return m.dump(2) + "\n";
}

std::string metadata_digest(const json& meta) { return sha256_hex(canonical_metadata(meta)); }

namespace {

std::vector<std::pair<std::string, const FloatTensor*>> tensors_of(const Perturbation& p) {
  if (p.threat_model.kind == ThreatKind::Patch) {
    return {{"mask_logits", &p.mask_logits}, {"pattern_logits", &p.pattern_logits}};
  }
  return {{"delta", &p.delta}};
}

json metadata_of(const Perturbation& p, const std::string& stem, const json& summary) {
  json tensors = json::array();
  json meta{{"format", "xtransfer-perturbation"},
            {"format_version", kArtifactFormatVersion},
            {"threat_model", p.threat_model},
            {"resolution", p.resolution},
            {"targeted", p.targeted},
            {"target_text", p.target_text ? json(*p.target_text) : json(nullptr)},
            {"generation",
             {{"generator_version", p.meta.generator_version},
              {"config_digest", p.meta.config_digest},
              {"created_at", p.meta.created_at},
              {"summary", summary}}}};
  for (const auto& [name, t] : tensors_of(p)) {
    tensors.push_back({{"name", name},
                       {"file", stem + "." + name + ".bin"},
                       {"shape", t->shape},
                       {"dtype", "float32"},
                       {"byte_order", "little"},
                       {"sha256", sha256_hex(encode_payload(*t))}});
  }
  meta["tensors"] = tensors;
  return meta;
}

}  // namespace

ArtifactDescriptor save_perturbation(const Perturbation& p, const std::filesystem::path& meta_path,
                                     const json& summary) {
  p.validate();
  std::string stem = meta_path.filename().string();
  if (stem.size() > 5 && stem.substr(stem.size() - 5) == ".json") stem.resize(stem.size() - 5);
  const std::filesystem::path dir = meta_path.parent_path();
  json meta = metadata_of(p, stem, summary);
  for (const auto& [name, t] : tensors_of(p)) write_file_atomic(dir / (stem + "." + name + ".bin"), encode_payload(*t));
  const std::string digest = metadata_digest(meta);
  meta["digest"] = {{"algorithm", "sha256"}, {"value", digest}};
  write_file_atomic(meta_path, meta.dump(2) + "\n");
  ArtifactDescriptor d;
  d.path = meta_path.string();
  d.digest = digest;
  d.summary = summary;
  return d;
}

Perturbation load_perturbation(const std::filesystem::path& meta_path, const std::optional<std::string>& expected) {
  const std::string text = read_file(meta_path);
  json meta;
  try {
    meta = json::parse(text);
  } catch (const json::exception& e) {
    throw DigestMismatch("artifact metadata " + meta_path.string() + " is not valid JSON: " + e.what());
  }
  if (!meta.is_object() || meta.value("format", "") != "xtransfer-perturbation") {
    throw DigestMismatch(meta_path.string() + " is not a perturbation artifact");
  }
  if (meta.dump(2) + "\n" != text) throw DigestMismatch("artifact metadata " + meta_path.string() + " is not canonical");
  std::string stored;
  try {
    if (meta.at("digest").at("algorithm") != "sha256") throw DigestMismatch("unsupported digest algorithm");
    stored = meta.at("digest").at("value").get<std::string>();
  } catch (const json::exception&) {
    throw DigestMismatch("artifact metadata " + meta_path.string() + " lacks a digest");
  }
  const std::string actual = metadata_digest(meta);
  if (actual != stored) throw DigestMismatch("metadata digest mismatch for " + meta_path.string());
  if (expected && *expected != actual) throw DigestMismatch("artifact digest differs from the index entry");
  if (meta.at("format_version") != kArtifactFormatVersion) {
    throw IoError("unsupported artifact format_version " + meta.at("format_version").dump());
  }

  Perturbation p;
  try {
    p.threat_model = meta.at("threat_model").get<ThreatModel>();
    p.resolution = meta.at("resolution").get<Resolution>();
    p.targeted = meta.at("targeted").get<bool>();
    if (!meta.at("target_text").is_null()) p.target_text = meta.at("target_text").get<std::string>();
    const json& g = meta.at("generation");
    p.meta.generator_version = g.at("generator_version").get<std::string>();
    p.meta.config_digest = g.at("config_digest").get<std::string>();
    p.meta.created_at = g.at("created_at").get<std::string>();
  } catch (const json::exception& e) {
    throw InvariantViolation(std::string("artifact metadata is incomplete: ") + e.what());
  } catch (const ValidationError& e) {
    throw InvariantViolation(std::string("artifact threat model is invalid: ") + e.what());
  }

  const std::filesystem::path dir = meta_path.parent_path();
  for (const auto& t : meta.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    const std::string file = t.at("file").get<std::string>();
    if (file.find('/') != std::string::npos || file.find('\\') != std::string::npos || file == "..") {
      throw InvariantViolation("payload file name '" + file + "' must not contain a path");
    }
    const std::string bytes = read_file(dir / file);
    if (sha256_hex(bytes) != t.at("sha256").get<std::string>()) {
      throw DigestMismatch("payload digest mismatch for tensor '" + name + "'");
    }
    FloatTensor ft = decode_payload(bytes);
    if (ft.shape != t.at("shape").get<Shape>()) throw InvariantViolation("payload shape differs from metadata");
    if (name == "delta") {
      p.delta = std::move(ft);
    } else if (name == "mask_logits") {
      p.mask_logits = std::move(ft);
    } else if (name == "pattern_logits") {
      p.pattern_logits = std::move(ft);
    } else {
      throw InvariantViolation("unknown tensor '" + name + "' in artifact");
    }
  }
  p.validate();
  return p;
}

ZooIndex ZooIndex::load(const std::filesystem::path& path) {
  ZooIndex z;
  z.base_dir_ = path.parent_path();
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ValidationError("zoo index " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "xtransfer-zoo-index" || j.value("format_version", 0) != 1) {
    throw ValidationError(path.string() + " is not a zoo index (format_version 1)");
  }
  try {
    for (const auto& [key, attackers] : j.at("threat_models").items()) {
      auto& slot = z.entries_[key];
      for (const auto& [id, d] : attackers.items()) slot[id] = d.get<ArtifactDescriptor>();
    }
  } catch (const json::exception& e) {
    throw ValidationError("zoo index " + path.string() + ": " + e.what());
  }
  return z;
}

void ZooIndex::save(const std::filesystem::path& path) const {
  json tm = json::object();
  for (const auto& [key, attackers] : entries_) {
    for (const auto& [id, d] : attackers) tm[key][id] = d;
  }
  json j{{"format", "xtransfer-zoo-index"}, {"format_version", 1}, {"threat_models", tm}};
  write_file_atomic(path, j.dump(2) + "\n");
}

std::vector<std::string> ZooIndex::list_threat_models() const {
  std::vector<std::string> out;
  for (const auto& [key, attackers] : entries_) {
    if (!attackers.empty()) out.push_back(key);
  }
  return out;
}

std::vector<std::string> ZooIndex::list_attackers(const std::string& threat_model) const {
  std::vector<std::string> out;
  if (auto it = entries_.find(threat_model); it != entries_.end()) {
    for (const auto& [id, d] : it->second) out.push_back(id);
  }
  return out;
}

const ArtifactDescriptor& ZooIndex::descriptor(const std::string& threat_model, const std::string& id) const {
  auto it = entries_.find(threat_model);
  if (it == entries_.end()) throw UnknownAttacker("unknown threat model '" + threat_model + "'");
  auto jt = it->second.find(id);
  if (jt == it->second.end()) {
    throw UnknownAttacker("unknown attacker '" + id + "' under threat model '" + threat_model + "'");
  }
  return jt->second;
}

void ZooIndex::add(const std::string& threat_model, const std::string& id, ArtifactDescriptor d) {
  if (threat_model.empty() || id.empty()) throw ValidationError("zoo entries need a threat model key and an id");
  entries_[threat_model][id] = std::move(d);
}

Perturbation ZooIndex::load_attacker(const std::string& threat_model, const std::string& id) const {
  const ArtifactDescriptor& d = descriptor(threat_model, id);
  if (d.format_version != kArtifactFormatVersion) {
    throw IoError("attacker '" + id + "' uses unsupported format_version " + std::to_string(d.format_version));
  }
  std::filesystem::path meta;
  if (!d.path.empty()) {
    meta = d.path;
    if (meta.is_relative()) meta = base_dir_ / meta;
  }
  if (!d.url.empty() && (meta.empty() || !std::filesystem::exists(meta))) {
    const std::filesystem::path cache = base_dir_ / ".cache" / d.digest;
    meta = fetch_url(d.url, cache);
    json m = json::parse(read_file(meta));
    const std::string base = d.url.substr(0, d.url.rfind('/') + 1);
    for (const auto& t : m.at("tensors")) fetch_url(base + t.at("file").get<std::string>(), cache);
  }
  Perturbation p = load_perturbation(meta, d.digest);
  if (threat_model_key(p) != threat_model) {
    throw InvariantViolation("attacker '" + id + "' is a " + threat_model_key(p) + " artifact, indexed under " +
                             threat_model);
  }
  return p;
}

Attacker make_attacker(Perturbation p) {
  p.validate();
  return [p = std::move(p)](const ImageBatch& x) {
    return apply_perturbation(x, x.resolution() == p.resolution ? p : rescale_perturbation(p, x.resolution()));
  };
}

Perturbation ingest_raw_linf(const std::filesystem::path& raw, Resolution res, double epsilon) {
  const std::string bytes = read_file(raw);
  const std::size_t n = 3 * res.height * res.width;
  if (bytes.size() != 4 * n) {
    throw IoError("raw delta " + raw.string() + " holds " + std::to_string(bytes.size()) + " bytes, expected " +
                  std::to_string(4 * n));
  }
  Perturbation p = Perturbation::identity(ThreatModel::linf(epsilon), res);
  le::Reader r(bytes);
  for (auto& v : p.delta.values) v = r.f32();
  p.meta.generator_version = "ingested";
  p.validate();
  return p;
}

std::filesystem::path fetch_url(const std::string& url, const std::filesystem::path& cache_dir) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw IoError("unsupported artifact URL '" + url + "'");
  httplib::Client cli(m[1].str());
  cli.set_follow_location(true);
  cli.set_connection_timeout(10);
  auto res = cli.Get(m[2].str());
  if (!res || res->status != 200) {
    throw IoError("fetch " + url + " failed" + (res ? " with HTTP " + std::to_string(res->status) : std::string()));
  }
  const std::string name = url.substr(url.rfind('/') + 1);
  if (name.empty()) throw IoError("URL '" + url + "' names no file");
  const std::filesystem::path out = cache_dir / name;
  write_file_atomic(out, res->body);
  return out;
}

}  // namespace xtransfer
