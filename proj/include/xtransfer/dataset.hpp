#pragma once

// Dataset manifests: a JSON header line followed by one JSON object per entry.
//
//   {"format":"xtransfer-manifest","version":1,"id":"...","kind":"classification",
//    "root":"images","class_names":[...],"prompt_template":"a photo of a {}"}
//   {"image":"0000.png","label":3}
//   {"image":"0001.png","captions":["a photo of a red circle"]}
//
// Relative image paths resolve against `root`, which itself resolves against
// the manifest's directory.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xtransfer/core.hpp"

namespace xtransfer {

enum class DatasetKind { Classification, Captioned };
std::string to_string(DatasetKind kind);

struct DatasetEntry {
  std::string image;                 // path relative to root
  std::optional<std::size_t> label;  // classification
  std::vector<std::string> captions; // captioned
  std::optional<Tensor> pixels;      // in-memory image [3,H,W], overrides `image`
};

struct DatasetManifest {
  std::string id;
  DatasetKind kind = DatasetKind::Classification;
  std::filesystem::path root;
  std::vector<DatasetEntry> entries;
  std::vector<std::string> class_names;
  std::string prompt_template = "a photo of a {}";

  void validate() const;
  std::size_t size() const { return entries.size(); }
  // Fills the template's "{}" with `label`.
  std::string prompt(const std::string& label) const;
  // Loads every image; all must share one size (they are resized to the first
  // image's size otherwise).
  ImageBatch images() const;
  ImageBatch images(const std::vector<std::size_t>& indices) const;
};

std::string fill_template(const std::string& templ, const std::string& value);

DatasetManifest load_manifest(const std::filesystem::path& path);
// Writes the header and entries; in-memory pixels are written as PNG files
// under `root` (created if missing) and referenced by relative path.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

}  // namespace xtransfer
