#include "xtransfer/encoders.hpp"

#include <fstream>
#include <set>

#include "xtransfer/container.hpp"
#include "xtransfer/digest.hpp"
#include "xtransfer/errors.hpp"

namespace xtransfer {

using nlohmann::json;

void EncoderHandle::validate() const {
  if (id.empty()) throw ValidationError("encoder handle without id");
  if (embed_dim < 1) throw ValidationError("encoder '" + id + "': embed_dim must be >= 1");
  if (input_resolution.height == 0 || input_resolution.width == 0) {
    throw ValidationError("encoder '" + id + "': input resolution must be positive");
  }
  if (backend_locator.empty()) throw ValidationError("encoder '" + id + "': empty backend_locator");
}

std::vector<std::string> SearchSpace::ids() const {
  std::vector<std::string> out;
  out.reserve(handles.size());
  for (const auto& h : handles) out.push_back(h.id);
  return out;
}

void SearchSpace::validate() const {
  if (handles.empty()) throw ValidationError("search space '" + name + "' is empty");
  std::set<std::string> seen;
  for (const auto& h : handles) {
    h.validate();
    if (!seen.insert(h.id).second) throw ValidationError("duplicate encoder id '" + h.id + "' in search space");
  }
}

std::string SearchSpace::digest() const {
  json j = *this;
  return sha256_hex(j.dump());
}

void to_json(json& j, const EncoderHandle& h) {
  j = json{{"id", h.id},
           {"architecture_tag", h.architecture_tag},
           {"pretraining_tag", h.pretraining_tag},
           {"backend_locator", h.backend_locator},
           {"input_resolution", {h.input_resolution.height, h.input_resolution.width}},
           {"embed_dim", h.embed_dim}};
}

void from_json(const json& j, EncoderHandle& h) {
  h.id = j.at("id").get<std::string>();
  h.architecture_tag = j.value("architecture_tag", "");
  h.pretraining_tag = j.value("pretraining_tag", "");
  h.backend_locator = j.at("backend_locator").get<std::string>();
  const auto& r = j.at("input_resolution");
  if (!r.is_array() || r.size() != 2) throw ValidationError("input_resolution must be [height, width]");
  h.input_resolution = {r[0].get<std::size_t>(), r[1].get<std::size_t>()};
  h.embed_dim = j.at("embed_dim").get<std::size_t>();
}

void to_json(json& j, const SearchSpace& s) { j = json{{"name", s.name}, {"handles", s.handles}}; }

void from_json(const json& j, SearchSpace& s) {
  s.name = j.at("name").get<std::string>();
  s.handles = j.at("handles").get<std::vector<EncoderHandle>>();
}

SearchSpace load_search_space(const std::filesystem::path& path) {
  SearchSpace s;
  try {
    s = json::parse(read_file(path)).get<SearchSpace>();
  } catch (const json::exception& e) {
    throw ValidationError("search space " + path.string() + ": " + e.what());
  }
  s.validate();
  return s;
}

void save_search_space(const SearchSpace& space, const std::filesystem::path& path) {
  json j = space;
  write_file_atomic(path, j.dump(2) + "\n");
}

std::vector<double> EmbeddingBatch::row(std::size_t i) const {
  const std::size_t d = dim();
  return std::vector<double>(vectors.data() + i * d, vectors.data() + (i + 1) * d);
}

ad::Var encode_image(const Encoder& encoder, ad::Tape& tape, ad::Var pixels) {
  const Resolution r = encoder.handle().input_resolution;
  ad::Var in = ad::resize_bilinear(pixels, r.height, r.width);
  return encoder.image_forward(tape, in);
}

EmbeddingBatch encode_image(const Encoder& encoder, const ImageBatch& x, std::size_t chunk) {
  if (chunk == 0) chunk = x.size();
  std::vector<double> rows;
  std::size_t d = 0;
  for (std::size_t begin = 0; begin < x.size(); begin += chunk) {
    const std::size_t end = std::min(x.size(), begin + chunk);
    ad::Tape tape;
    ad::Var z = encode_image(encoder, tape, tape.constant(x.pixels().rows(begin, end)));
    d = z.shape()[1];
    rows.insert(rows.end(), z.value().storage().begin(), z.value().storage().end());
  }
  return EmbeddingBatch{Tensor({x.size(), d}, std::move(rows))};
}

EmbeddingBatch encode_text(const Encoder& encoder, const std::vector<std::string>& texts) {
  if (texts.empty()) throw ValidationError("encode_text: empty text list");
  return encoder.encode_text(texts);
}

std::shared_ptr<const Encoder> EncoderRegistry::get(const EncoderHandle& handle) {
  std::lock_guard lock(mutex_);
  if (auto it = cache_.find(handle.id); it != cache_.end()) return it->second;
  const std::string& loc = handle.backend_locator;
  const auto colon = loc.find(':');
  const std::string scheme = loc.substr(0, colon);
  const std::string rest = colon == std::string::npos ? std::string() : loc.substr(colon + 1);
  if (scheme == "toy") {
    std::filesystem::path p(rest);
    if (p.is_relative() && !base_dir_.empty()) p = base_dir_ / p;
    ToyDualEncoder enc = [&] {
      try {
        return ToyDualEncoder::load(p);
      } catch (const Error& e) {
        throw BackendError("encoder '" + handle.id + "': cannot load toy weights from " + p.string() + ": " +
                           e.what());
      }
    }();
    if (enc.architecture().embed_dim != handle.embed_dim ||
        enc.architecture().resolution != handle.input_resolution.height ||
        enc.architecture().resolution != handle.input_resolution.width) {
      throw BackendError("encoder '" + handle.id + "': weights do not match the handle's embed_dim/resolution");
    }
    enc.set_handle(handle);
    auto ptr = std::make_shared<const ToyDualEncoder>(std::move(enc));
    cache_[handle.id] = ptr;
    return ptr;
  }
  if (scheme == "memory") {
    throw BackendError("encoder '" + handle.id + "': in-memory encoder '" + rest + "' is not registered");
  }
  if (scheme == "openclip") {
    throw BackendError("encoder '" + handle.id + "': backend 'openclip' (" + rest +
                       ") is declared but no checkpoint loader is bundled with this build");
  }
  throw BackendError("encoder '" + handle.id + "': unknown backend locator '" + loc + "'");
}

void EncoderRegistry::add(std::shared_ptr<const Encoder> encoder) {
  std::lock_guard lock(mutex_);
  cache_[encoder->handle().id] = std::move(encoder);
}

void EncoderRegistry::set_base_dir(std::filesystem::path dir) {
  std::lock_guard lock(mutex_);
  base_dir_ = std::move(dir);
}

}  // namespace xtransfer
