#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "changeflow/grid.hpp"

namespace changeflow {

/// 8-bit RGB PNG, values scaled to [0, 1]. Throws LoadError naming the file.
Image read_rgb_png(const std::filesystem::path& path);
/// Writes round(255 * v) per channel after clamping to [0, 1].
void write_rgb_png(const std::filesystem::path& path, const Image& image);

/// 8-bit grayscale PNG restricted to {0, 255}; any other value is a LoadError.
BinaryMask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask);

/// Grayscale rendering of a soft mask, value round(255 * v).
void write_soft_png(const std::filesystem::path& path, const SoftMask& mask);

/// Raw grayscale pixels and extent.
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;
};
GrayImage read_gray_png(const std::filesystem::path& path);

}  // namespace changeflow
