#pragma once

#include <filesystem>

#include "xtransfer/tensor.hpp"

namespace xtransfer {

// Reads PNG (any bit depth, gray/RGB, alpha dropped) or binary/ASCII PPM into
// a [3,H,W] tensor with values in [0,1].
Tensor read_image(const std::filesystem::path& path);

// 8-bit RGB; values are clamped to [0,1] and rounded to the nearest level.
void write_png(const std::filesystem::path& path, const Tensor& image);
void write_ppm(const std::filesystem::path& path, const Tensor& image);
// Dispatches on extension (.png or .ppm).
void write_image(const std::filesystem::path& path, const Tensor& image);

// 8-bit quantization used by the writers.
unsigned char to_u8(double v);

}  // namespace xtransfer
