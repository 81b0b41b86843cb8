#include "xtransfer/dataset.hpp"

#include <nlohmann/json.hpp>

#include <sstream>

#include "xtransfer/container.hpp"
#include "xtransfer/errors.hpp"
#include "xtransfer/image_io.hpp"

namespace xtransfer {

using nlohmann::json;

std::string to_string(DatasetKind kind) {
  return kind == DatasetKind::Classification ? "classification" : "captioned";
}

std::string fill_template(const std::string& templ, const std::string& value) {
  const auto pos = templ.find("{}");
  if (pos == std::string::npos) throw ValidationError("prompt template '" + templ + "' has no {} placeholder");
  return templ.substr(0, pos) + value + templ.substr(pos + 2);
}

std::string DatasetManifest::prompt(const std::string& label) const { return fill_template(prompt_template, label); }

void DatasetManifest::validate() const {
  if (entries.empty()) throw ValidationError("manifest '" + id + "' has no entries");
  if (prompt_template.find("{}") == std::string::npos) {
    throw ValidationError("manifest '" + id + "': prompt template has no {} placeholder", "/prompt_template");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.image.empty() && !e.pixels) throw ValidationError("manifest '" + id + "': entry " + std::to_string(i) + " has no image");
    if (kind == DatasetKind::Classification) {
      if (!e.label || *e.label >= class_names.size()) {
        throw ValidationError("manifest '" + id + "': entry " + std::to_string(i) + " label missing or out of range");
      }
    } else if (e.captions.empty()) {
      throw ValidationError("manifest '" + id + "': entry " + std::to_string(i) + " has no captions");
    }
  }
}

ImageBatch DatasetManifest::images() const {
  std::vector<std::size_t> all(entries.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return images(all);
}

ImageBatch DatasetManifest::images(const std::vector<std::size_t>& indices) const {
  if (indices.empty()) throw ValidationError("manifest '" + id + "': empty image selection");
  std::vector<Tensor> imgs;
  imgs.reserve(indices.size());
  for (std::size_t i : indices) {
    const auto& e = entries.at(i);
    Tensor t = e.pixels ? *e.pixels : read_image(std::filesystem::path(e.image).is_absolute() ? std::filesystem::path(e.image) : root / e.image);
    if (!imgs.empty() && t.shape() != imgs.front().shape()) {
      t = resize_bilinear(t, imgs.front().dim(1), imgs.front().dim(2));
    }
    imgs.push_back(std::move(t));
  }
  return ImageBatch(stack(imgs));
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t lineno = 0;
  DatasetManifest m;
  bool header = false;
  auto fail = [&](const std::string& what) {
    throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(std::string("invalid JSON: ") + e.what());
    }
    try {
      if (!header) {
        if (j.value("format", "") != "xtransfer-manifest") fail("missing manifest header");
        if (j.value("version", 0) != 1) fail("unsupported manifest version");
        m.id = j.at("id").get<std::string>();
        const std::string kind = j.at("kind").get<std::string>();
        if (kind == "classification") {
          m.kind = DatasetKind::Classification;
        } else if (kind == "captioned") {
          m.kind = DatasetKind::Captioned;
        } else {
          fail("unknown manifest kind '" + kind + "'");
        }
        std::filesystem::path root = j.value("root", "");
        m.root = root.is_absolute() ? root : path.parent_path() / root;
        m.class_names = j.value("class_names", std::vector<std::string>{});
        m.prompt_template = j.value("prompt_template", m.prompt_template);
        header = true;
        continue;
      }
      DatasetEntry e;
      e.image = j.at("image").get<std::string>();
      if (j.contains("label")) e.label = j.at("label").get<std::size_t>();
      if (j.contains("captions")) e.captions = j.at("captions").get<std::vector<std::string>>();
      if (j.contains("caption")) e.captions.push_back(j.at("caption").get<std::string>());
      if (m.kind == DatasetKind::Classification && (!e.label || *e.label >= m.class_names.size())) {
        fail("label missing or out of range for " + std::to_string(m.class_names.size()) + " classes");
      }
      if (m.kind == DatasetKind::Captioned && e.captions.empty()) fail("captioned entry has no captions");
      m.entries.push_back(std::move(e));
    } catch (const json::exception& e) {
      fail(e.what());
    }
  }
  if (!header) throw ValidationError(path.string() + ": empty manifest");
  m.validate();
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  manifest.validate();
  const std::filesystem::path dir = path.parent_path();
  const std::filesystem::path root_abs = manifest.root.is_absolute() ? manifest.root : dir / manifest.root;
  std::string out = json{{"format", "xtransfer-manifest"},
                         {"version", 1},
                         {"id", manifest.id},
                         {"kind", to_string(manifest.kind)},
                         {"root", manifest.root.string()},
                         {"class_names", manifest.class_names},
                         {"prompt_template", manifest.prompt_template}}
                        .dump() +
                    "\n";
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    std::string image = e.image;
    if (e.pixels) {
      if (image.empty()) {
        std::ostringstream name;
        name << manifest.id << "_" << i << ".png";
        image = name.str();
      }
      write_png(root_abs / image, *e.pixels);
    }
    json j{{"image", image}};
    if (e.label) j["label"] = *e.label;
    if (!e.captions.empty()) j["captions"] = e.captions;
    out += j.dump() + "\n";
  }
  write_file_atomic(path, out);
}

}  // namespace xtransfer
