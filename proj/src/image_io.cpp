#include "xtransfer/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "xtransfer/container.hpp"
#include "xtransfer/errors.hpp"

namespace xtransfer {

unsigned char to_u8(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

namespace {

Tensor read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  const std::size_t h = img.height, w = img.width;
  Tensor t({3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) t[(c * h + y) * w + x] = buf[(y * w + x) * 3 + c] / 255.0;
    }
  }
  return t;
}

Tensor read_ppm(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  std::istringstream in(data);
  auto token = [&]() {
    std::string tok;
    while (in >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return tok;
    }
    throw IoError("truncated PPM header in " + path.string());
  };
  const std::string magic = token();
  if (magic != "P6" && magic != "P3") throw IoError("unsupported PPM variant '" + magic + "' in " + path.string());
  const std::size_t w = std::stoul(token()), h = std::stoul(token());
  const unsigned long maxval = std::stoul(token());
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw IoError("bad PPM header in " + path.string());
  Tensor t({3, h, w});
  if (magic == "P3") {
    for (std::size_t i = 0; i < h * w; ++i) {
      for (std::size_t c = 0; c < 3; ++c) t[c * h * w + i] = std::stod(token()) / static_cast<double>(maxval);
    }
    return t;
  }
  in.get();  // single whitespace after maxval
  const std::size_t bps = maxval > 255 ? 2 : 1;
  const std::size_t offset = static_cast<std::size_t>(in.tellg());
  if (data.size() < offset + h * w * 3 * bps) throw IoError("truncated PPM payload in " + path.string());
  const auto* p = reinterpret_cast<const unsigned char*>(data.data() + offset);
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t k = (i * 3 + c) * bps;
      const unsigned v = bps == 2 ? (p[k] << 8 | p[k + 1]) : p[k];
      t[c * h * w + i] = v / static_cast<double>(maxval);
    }
  }
  return t;
}

void require_image(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("image must be [3,H,W], got " + shape_string(image.shape()));
}

std::vector<unsigned char> interleave(const Tensor& image) {
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::vector<unsigned char> buf(h * w * 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) buf[(y * w + x) * 3 + c] = to_u8(image[(c * h + y) * w + x]);
    }
  }
  return buf;
}

}  // namespace

Tensor read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("image not found: " + path.string());
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return read_png(path);
  if (ext == ".ppm" || ext == ".pnm") return read_ppm(path);
  throw IoError("unsupported image format: " + path.string());
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  require_image(image);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto buf = interleave(image);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.dim(2));
  img.height = static_cast<png_uint_32>(image.dim(1));
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  require_image(image);
  const auto buf = interleave(image);
  std::string out = "P6\n" + std::to_string(image.dim(2)) + " " + std::to_string(image.dim(1)) + "\n255\n";
  out.append(reinterpret_cast<const char*>(buf.data()), buf.size());
  write_file_atomic(path, out);
}

void write_image(const std::filesystem::path& path, const Tensor& image) {
  const std::string ext = path.extension().string();
  if (ext == ".ppm") return write_ppm(path, image);
  if (ext == ".png") return write_png(path, image);
  throw IoError("unsupported output image format: " + path.string());
}

}  // namespace xtransfer
