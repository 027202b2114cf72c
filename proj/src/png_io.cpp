#include "changeflow/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace changeflow {

namespace {

std::vector<std::uint8_t> read_png(const std::filesystem::path& path, png_uint_32 format, int& height, int& width) {
  if (!std::filesystem::exists(path)) throw LoadError("missing file: " + path.string());
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&image, path.c_str()) == 0) {
    throw LoadError("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr) == 0) {
    const std::string message = image.message;
    png_image_free(&image);
    throw LoadError("cannot decode PNG " + path.string() + ": " + message);
  }
  height = static_cast<int>(image.height);
  width = static_cast<int>(image.width);
  return buffer;
}

void write_png(const std::filesystem::path& path, png_uint_32 format, int height, int width,
               const std::vector<std::uint8_t>& pixels) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.format = format;
  image.height = static_cast<png_uint_32>(height);
  image.width = static_cast<png_uint_32>(width);
  if (png_image_write_to_file(&image, path.c_str(), 0, pixels.data(), 0, nullptr) == 0) {
    throw Error("cannot write PNG " + path.string() + ": " + image.message);
  }
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

Image read_rgb_png(const std::filesystem::path& path) {
  int h = 0, w = 0;
  const auto bytes = read_png(path, PNG_FORMAT_RGB, h, w);
  Image image(Shape{h, w, 3});
  std::transform(bytes.begin(), bytes.end(), image.values().begin(),
                 [](std::uint8_t b) { return static_cast<float>(b) / 255.0f; });
  return image;
}

void write_rgb_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels() != 3) throw InvalidShape("write_rgb_png: image must have 3 channels");
  std::vector<std::uint8_t> bytes(image.size());
  std::transform(image.values().begin(), image.values().end(), bytes.begin(), to_byte);
  write_png(path, PNG_FORMAT_RGB, image.height(), image.width(), bytes);
}

GrayImage read_gray_png(const std::filesystem::path& path) {
  GrayImage out;
  out.pixels = read_png(path, PNG_FORMAT_GRAY, out.height, out.width);
  return out;
}

BinaryMask read_mask_png(const std::filesystem::path& path) {
  const GrayImage gray = read_gray_png(path);
  std::vector<std::uint8_t> values(gray.pixels.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint8_t v = gray.pixels[i];
    if (v != 0 && v != 255) {
      throw LoadError("mask " + path.string() + " contains value " + std::to_string(v) + " (expected 0 or 255)");
    }
    values[i] = v == 255 ? 1 : 0;
  }
  return BinaryMask(gray.height, gray.width, std::move(values));
}

void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> bytes(mask.size());
  std::transform(mask.values().begin(), mask.values().end(), bytes.begin(),
                 [](std::uint8_t v) -> std::uint8_t { return v != 0 ? 255 : 0; });
  write_png(path, PNG_FORMAT_GRAY, mask.height(), mask.width(), bytes);
}

void write_soft_png(const std::filesystem::path& path, const SoftMask& mask) {
  if (mask.channels() != 1) throw InvalidShape("write_soft_png: mask must have 1 channel");
  std::vector<std::uint8_t> bytes(mask.size());
  std::transform(mask.values().begin(), mask.values().end(), bytes.begin(), to_byte);
  write_png(path, PNG_FORMAT_GRAY, mask.height(), mask.width(), bytes);
}

}  // namespace changeflow
