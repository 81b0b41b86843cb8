#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "xtransfer/container.hpp"
#include "xtransfer/errors.hpp"
#include "xtransfer/zoo.hpp"

using namespace xtransfer;
using namespace xtransfer::testing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("xtransfer_zoo_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Perturbation random_perturbation(Rng& rng) {
  const std::size_t h = 1 + rng.below(12), w = 1 + rng.below(12);
  const std::uint64_t seed = rng.next_u64();
  Perturbation p;
  switch (rng.below(3)) {
    case 0: {
      const double eps = rng.uniform(1.0, 32.0) / 255.0;
      p = Perturbation::identity(ThreatModel::linf(eps), {h, w});
      p.delta = FloatTensor::from(random_tensor({3, h, w}, seed, -eps, eps));
      project_linf(p.delta, eps);
      break;
    }
    case 1:
      p = Perturbation::identity(ThreatModel::l2(rng.uniform(0.01, 0.03)), {h, w});
      p.delta = FloatTensor::from(random_tensor({3, h, w}, seed, -0.5, 0.5));
      break;
    default:
      p = Perturbation::identity(ThreatModel::patch(rng.uniform(1e-5, 3e-5), 70.0), {h, w});
      p.mask_logits = FloatTensor::from(random_tensor({h, w}, seed, -6.0, 6.0));
      p.pattern_logits = FloatTensor::from(random_tensor({3, h, w}, seed + 1, -6.0, 6.0));
  }
  if (rng.below(2)) {
    p.targeted = true;
    p.target_text = "a photo of a target " + std::to_string(rng.below(100));
  }
  p.meta.config_digest = std::string(64, 'a');
  p.meta.created_at = "2026-01-01T00:00:00Z";
  return p;
}

}  // namespace

TEST(Payload, EncodeDecodeRoundTrip) {
  FloatTensor t = FloatTensor::from(random_tensor({2, 3, 4}, 1));
  t.values[0] = -0.0f;
  t.values[1] = std::numeric_limits<float>::denorm_min();
  const FloatTensor back = decode_payload(encode_payload(t));
  EXPECT_EQ(back.shape, t.shape);
  EXPECT_EQ(std::memcmp(back.values.data(), t.values.data(), t.values.size() * sizeof(float)), 0);
  const std::string bytes = encode_payload(t);
  EXPECT_ANY_THROW(decode_payload(bytes.substr(0, bytes.size() - 1)));
  EXPECT_ANY_THROW(decode_payload("XTTENS02" + bytes.substr(8)));
}

TEST(Artifacts, SaveLoadBitExactAcrossThreatModels) {
  const fs::path dir = temp_dir("roundtrip");
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const Perturbation p = random_perturbation(rng);
    const fs::path meta = dir / ("a" + std::to_string(i) + ".json");
    const ArtifactDescriptor d = save_perturbation(p, meta);
    const Perturbation back = load_perturbation(meta, d.digest);
    EXPECT_EQ(back, p) << i;
  }
}

TEST(Artifacts, CorruptedBytesAlwaysRejected) {
  const fs::path dir = temp_dir("fuzz");
  Rng rng(3);
  for (int i = 0; i < 30; ++i) {
    const Perturbation p = random_perturbation(rng);
    const fs::path meta = dir / "a.json";
    save_perturbation(p, meta);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    const fs::path victim = files[rng.below(files.size())];
    std::string bytes = read_file(victim);
    const std::size_t at = rng.below(bytes.size());
    bytes[at] = static_cast<char>(bytes[at] ^ (1 + rng.below(255)));
    write_file_atomic(victim, bytes);
    EXPECT_ANY_THROW(load_perturbation(meta)) << victim << " byte " << at;
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
}

TEST(Artifacts, DigestMismatchAndPathTraversal) {
  const fs::path dir = temp_dir("digest");
  Rng rng(4);
  const Perturbation p = random_perturbation(rng);
  const ArtifactDescriptor d = save_perturbation(p, dir / "x.json");
  EXPECT_THROW(load_perturbation(dir / "x.json", std::string(64, '0')), DigestMismatch);
  json meta = json::parse(read_file(dir / "x.json"));
  meta["tensors"][0]["file"] = "../x.delta.bin";
  meta["digest"]["value"] = metadata_digest(meta);
  write_file_atomic(dir / "x.json", canonical_metadata(meta));
  EXPECT_ANY_THROW(load_perturbation(dir / "x.json"));
  EXPECT_EQ(d.format_version, 1);
}

TEST(Artifacts, ThreatModelKeys) {
  Perturbation p = Perturbation::identity(ThreatModel::patch(1e-5, 70.0), {2, 2});
  EXPECT_EQ(threat_model_key(p), "patch_non_targeted");
  p.targeted = true;
  p.target_text = "x";
  EXPECT_EQ(threat_model_key(p), "patch_targeted");
}

TEST(ZooIndexTest, ListAndLoad) {
  const fs::path dir = temp_dir("index");
  Rng rng(5);
  ZooIndex z;
  std::map<std::string, Perturbation> saved;
  for (int i = 0; i < 6; ++i) {
    const Perturbation p = random_perturbation(rng);
    const std::string id = "uap" + std::to_string(i);
    ArtifactDescriptor d = save_perturbation(p, dir / (id + ".json"));
    d.path = id + ".json";
    z.add(threat_model_key(p), id, d);
    saved[threat_model_key(p) + "/" + id] = p;
  }
  z.save(dir / "index.json");
  const ZooIndex back = ZooIndex::load(dir / "index.json");
  std::size_t total = 0;
  for (const auto& tm : back.list_threat_models()) {
    for (const auto& id : back.list_attackers(tm)) {
      EXPECT_EQ(back.load_attacker(tm, id), saved.at(tm + "/" + id));
      ++total;
    }
  }
  EXPECT_EQ(total, 6u);
  EXPECT_THROW(back.load_attacker("linf_non_targeted", "missing"), UnknownAttacker);
  EXPECT_TRUE(back.list_attackers("l1_targeted").empty());
}

TEST(ZooIndexTest, AttackerCallableApplies) {
  Perturbation p = Perturbation::identity(ThreatModel::linf(0.1), {4, 4});
  for (auto& v : p.delta.values) v = 0.05f;
  const Attacker a = make_attacker(p);
  const ImageBatch x(Tensor({1, 3, 4, 4}, 0.5));
  const ImageBatch y = a(x);
  for (double v : y.pixels().values()) EXPECT_NEAR(v, 0.55, 1e-7);
}

TEST(ZooIndexTest, RawIngest) {
  const fs::path dir = temp_dir("raw");
  std::vector<float> raw(3 * 4 * 4, 0.03f);
  raw[5] = linf_bound_f32(12.0 / 255.0);
  {
    std::ofstream f(dir / "d.raw", std::ios::binary);
    f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
  }
  const Perturbation p = ingest_raw_linf(dir / "d.raw", {4, 4}, 12.0 / 255.0);
  EXPECT_NO_THROW(p.validate());
  EXPECT_EQ(p.delta.values[5], linf_bound_f32(12.0 / 255.0));
  EXPECT_ANY_THROW(ingest_raw_linf(dir / "d.raw", {5, 4}, 12.0 / 255.0));
  EXPECT_THROW(ingest_raw_linf(dir / "d.raw", {4, 4}, 8.0 / 255.0), InvariantViolation);
}
