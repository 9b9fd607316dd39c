#pragma once

#include <filesystem>
#include <vector>

#include "bsdn/tensor.hpp"

namespace bsdn {

/// 8- or 16-bit grayscale / RGB PNG to a [1, c, H, W] tensor in [0, 1].
/// Palette images are expanded to RGB; alpha is dropped.
Tensor read_png(const std::filesystem::path& path);

/// Writes a [1, c, H, W] tensor (c = 1 or 3). Values are clamped to [0, 1]
/// and rounded to the nearest code; bit_depth is 8 or 16.
void write_png(const std::filesystem::path& path, const Tensor& image, int bit_depth = 16);

/// *.png files directly inside `dir`, sorted by filename.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace bsdn
