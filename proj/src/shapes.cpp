#include <algorithm>
#include <array>
#include <cmath>

#include "xtransfer/encoders.hpp"
#include "xtransfer/errors.hpp"
#include "xtransfer/rng.hpp"

namespace xtransfer {

namespace {

struct Rgb {
  double r, g, b;
};

constexpr std::array<const char*, 4> kColors = {"red", "green", "blue", "yellow"};
constexpr std::array<Rgb, 4> kColorValues = {{{0.90, 0.15, 0.15}, {0.15, 0.80, 0.20}, {0.20, 0.30, 0.95},
                                              {0.95, 0.90, 0.15}}};
constexpr std::array<const char*, 5> kShapes = {"circle", "square", "triangle", "cross", "diamond"};

bool inside(std::size_t shape, double u, double v, double r) {
  switch (shape) {
    case 0:  // circle
      return u * u + v * v <= r * r;
    case 1:  // square
      return std::abs(u) <= 0.8 * r && std::abs(v) <= 0.8 * r;
    case 2: {  // upward triangle with vertices (0,-r), (+-0.866r, 0.5r)
      if (v > 0.5 * r) return false;
      const double half_width = (v + r) / 1.5 * 0.866;
      return v >= -r && std::abs(u) <= half_width;
    }
    case 3:  // cross
      return (std::abs(u) <= 0.3 * r && std::abs(v) <= r) || (std::abs(v) <= 0.3 * r && std::abs(u) <= r);
    case 4:  // diamond
      return std::abs(u) + std::abs(v) <= r;
    default:
      return false;
  }
}

Tensor render(std::size_t res, std::size_t color, std::size_t shape, double contrast, Rng& rng) {
  const double R = static_cast<double>(res);
  const double bg = rng.uniform(0.05, 0.45);
  const std::array<double, 3> tint = {rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)};
  const double ramp = rng.uniform(-0.1, 0.1);
  const double ramp_angle = rng.uniform(0.0, 6.283185307179586);
  const double cx = rng.uniform(0.35 * R, 0.65 * R);
  const double cy = rng.uniform(0.35 * R, 0.65 * R);
  const double radius = rng.uniform(0.2 * R, 0.3 * R);
  const double theta = rng.uniform(-0.3, 0.3);
  const Rgb base = kColorValues[color];
  const std::array<double, 3> fg = {std::clamp(base.r + rng.uniform(-0.07, 0.07), 0.0, 1.0),
                                    std::clamp(base.g + rng.uniform(-0.07, 0.07), 0.0, 1.0),
                                    std::clamp(base.b + rng.uniform(-0.07, 0.07), 0.0, 1.0)};
  const double ct = std::cos(theta), st = std::sin(theta);
  Tensor img({3, res, res});
  for (std::size_t y = 0; y < res; ++y) {
    for (std::size_t x = 0; x < res; ++x) {
      int hits = 0;
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) {
          const double px = static_cast<double>(x) + 0.25 + 0.5 * sx - cx;
          const double py = static_cast<double>(y) + 0.25 + 0.5 * sy - cy;
          const double u = ct * px + st * py;
          const double v = -st * px + ct * py;
          hits += inside(shape, u, v, radius);
        }
      }
      const double cov = hits / 4.0;
      const double shade = ramp * ((static_cast<double>(x) / R - 0.5) * std::cos(ramp_angle) +
                                   (static_cast<double>(y) / R - 0.5) * std::sin(ramp_angle));
      for (std::size_t c = 0; c < 3; ++c) {
        const double back = bg + tint[c] + shade;
        const double v = back + cov * contrast * (fg[c] - back) + 0.03 * rng.normal();
        img[(c * res + y) * res + x] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return img;
}

}  // namespace

std::vector<std::string> toy_colors() { return {kColors.begin(), kColors.end()}; }
std::vector<std::string> toy_shapes() { return {kShapes.begin(), kShapes.end()}; }

std::vector<std::string> toy_vocabulary() {
  std::vector<std::string> v = {"a", "an", "the", "photo", "image", "picture", "of"};
  for (auto c : kColors) v.emplace_back(c);
  for (auto s : kShapes) v.emplace_back(s);
  return v;
}

ImageBatch ShapesDataset::batch(const std::vector<std::size_t>& indices) const {
  std::vector<Tensor> parts;
  parts.reserve(indices.size());
  for (auto i : indices) parts.push_back(images.at(i));
  return ImageBatch(stack(parts));
}

ShapesDataset generate_shapes(const ShapesDatasetSpec& spec) {
  const std::size_t max_classes = kColors.size() * kShapes.size();
  if (spec.num_classes < 2 || spec.num_classes > max_classes) {
    throw ValidationError("num_classes must lie in [2, " + std::to_string(max_classes) + "]");
  }
  if (spec.images_per_class < 1) throw ValidationError("images_per_class must be >= 1");
  if (spec.resolution < 8) throw ValidationError("shape resolution must be >= 8");
  if (!(spec.contrast > 0.0 && spec.contrast <= 1.0)) throw ValidationError("shape contrast must lie in (0, 1]");
  ShapesDataset d;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    d.class_names.push_back(std::string(kColors[c % kColors.size()]) + " " + kShapes[c / kColors.size()]);
  }
  // class-interleaved order so any prefix is roughly balanced
  for (std::size_t i = 0; i < spec.images_per_class; ++i) {
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      Rng rng(derive_seed(spec.seed, d.images.size()));
      d.images.push_back(render(spec.resolution, c % kColors.size(), c / kColors.size(), spec.contrast, rng));
      d.labels.push_back(c);
      d.captions.push_back("a photo of a " + d.class_names[c]);
    }
  }
  return d;
}

}  // namespace xtransfer
