#include <gtest/gtest.h>

#include <filesystem>

#include "test_util.hpp"
#include "xtransfer/container.hpp"
#include "xtransfer/dataset.hpp"
#include "xtransfer/errors.hpp"
#include "xtransfer/image_io.hpp"
#include "xtransfer/json_locate.hpp"
#include "xtransfer/plots.hpp"

using namespace xtransfer;
using namespace xtransfer::testing;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("xtransfer_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(ImageIo, PngAndPpmRoundTripAt8Bits) {
  const fs::path dir = temp_dir("img");
  const Tensor img = random_tensor({3, 5, 7}, 1, 0.0, 1.0);
  for (const char* name : {"a.png", "a.ppm"}) {
    write_image(dir / name, img);
    const Tensor back = read_image(dir / name);
    ASSERT_EQ(back.shape(), img.shape());
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_DOUBLE_EQ(back[i], to_u8(img[i]) / 255.0);
  }
  EXPECT_ANY_THROW(write_image(dir / "a.bmp", img));
  EXPECT_ANY_THROW(read_image(dir / "missing.png"));
}

TEST(ImageIo, Quantization) {
  EXPECT_EQ(to_u8(0.0), 0);
  EXPECT_EQ(to_u8(1.0), 255);
  EXPECT_EQ(to_u8(-0.5), 0);
  EXPECT_EQ(to_u8(2.0), 255);
  EXPECT_EQ(to_u8(0.5), 128);
}

TEST(Manifest, SaveLoadRoundTrip) {
  const fs::path dir = temp_dir("manifest");
  DatasetManifest m;
  m.id = "tiny";
  m.kind = DatasetKind::Captioned;
  m.root = "imgs";
  m.prompt_template = "an image of {}";
  for (int i = 0; i < 3; ++i) {
    DatasetEntry e;
    e.pixels = random_tensor({3, 6, 6}, 10 + i, 0.0, 1.0);
    e.captions = {"caption " + std::to_string(i), "other " + std::to_string(i)};
    m.entries.push_back(e);
  }
  save_manifest(m, dir / "m.jsonl");
  const DatasetManifest back = load_manifest(dir / "m.jsonl");
  EXPECT_EQ(back.id, "tiny");
  EXPECT_EQ(back.kind, DatasetKind::Captioned);
  EXPECT_EQ(back.prompt("dog"), "an image of dog");
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back.entries[2].captions, m.entries[2].captions);
  const ImageBatch x = back.images();
  EXPECT_EQ(x.size(), 3u);
  EXPECT_EQ(x.resolution(), (Resolution{6, 6}));
}

TEST(Manifest, ErrorsCarryLineNumbers) {
  const fs::path dir = temp_dir("manifest_bad");
  write_file_atomic(dir / "m.jsonl",
                    "{\"format\":\"xtransfer-manifest\",\"version\":1,\"id\":\"x\",\"kind\":\"classification\","
                    "\"root\":\".\",\"class_names\":[\"a\",\"b\"]}\n"
                    "{\"image\":\"a.png\",\"label\":0}\n"
                    "{\"image\":\"b.png\",\"label\":7}\n");
  try {
    load_manifest(dir / "m.jsonl");
    FAIL() << "bad label accepted";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
  }
}

TEST(Manifest, TemplateFill) {
  EXPECT_EQ(fill_template("a photo of a {}", "cat"), "a photo of a cat");
  EXPECT_EQ(fill_template("{}", "x"), "x");
  EXPECT_ANY_THROW(fill_template("no slot", "x"));
}

TEST(JsonLocate, PointerLines) {
  const std::string text = "{\n  \"a\": 1,\n  \"b\": [\n    {\"c\": 2},\n    3\n  ]\n}\n";
  const auto lines = json_pointer_lines(text);
  EXPECT_EQ(lines.at(""), 1u);
  EXPECT_EQ(lines.at("/a"), 2u);
  EXPECT_EQ(lines.at("/b"), 3u);
  EXPECT_EQ(lines.at("/b/0/c"), 4u);
  EXPECT_EQ(lines.at("/b/1"), 5u);
  EXPECT_EQ(line_of_pointer(lines, "/b/0/zzz"), 4u);
  EXPECT_EQ(line_of_pointer(lines, "/nope"), 1u);
}

TEST(ContainerTest, RoundTripAndCorruption) {
  const fs::path dir = temp_dir("container");
  Container c;
  c.put("t", random_tensor({2, 3}, 5));
  c.put_bytes("meta", "{\"x\":1}");
  c.write(dir / "c.bin");
  const Container back = Container::read(dir / "c.bin");
  EXPECT_EQ(back.tensor("t"), random_tensor({2, 3}, 5));
  EXPECT_EQ(back.bytes("meta"), "{\"x\":1}");
  std::string bytes = read_file(dir / "c.bin");
  bytes[bytes.size() / 2] ^= 0x10;
  write_file_atomic(dir / "c.bin", bytes);
  EXPECT_ANY_THROW(Container::read(dir / "c.bin"));
}

TEST(Plots, ProduceSvg) {
  const std::string bar = bar_chart_svg("t", {"a", "b"}, {{"s", {1.0, 2.0}}}, "y");
  const std::string line = line_chart_svg("t", {{"s", {1.0, 0.5, std::nan("")}}}, "x", "y");
  const std::string radar = radar_chart_svg("t", {"a", "b", "c"}, {{"s", {10.0, 20.0, 30.0}}}, 100.0);
  for (const auto* s : {&bar, &line, &radar}) {
    EXPECT_EQ(s->rfind("<svg", 0), 0u);
    EXPECT_NE(s->find("</svg>"), std::string::npos);
  }
}
