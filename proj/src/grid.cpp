#include "changeflow/grid.hpp"

#include <algorithm>

namespace changeflow {

std::string to_string(const Shape& shape) {
  return "(" + std::to_string(shape.height) + "," + std::to_string(shape.width) + "," +
         std::to_string(shape.channels) + ")";
}

void validate_shape(const Shape& shape, const char* what) {
  if (shape.height <= 0 || shape.width <= 0 || shape.channels <= 0) {
    throw InvalidShape(std::string(what) + ": non-positive dimension in " + to_string(shape));
  }
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    throw InvalidShape(std::string(what) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
  }
}

BinaryMask::BinaryMask(int height, int width) : height_(height), width_(width) {
  if (height <= 0 || width <= 0) throw InvalidShape("binary mask: non-positive dimension");
  values_.assign(static_cast<std::size_t>(height) * width, 0);
}

BinaryMask::BinaryMask(int height, int width, std::vector<std::uint8_t> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (height <= 0 || width <= 0) throw InvalidShape("binary mask: non-positive dimension");
  if (values_.size() != static_cast<std::size_t>(height) * width) {
    throw InvalidShape("binary mask: value count does not match extent");
  }
  if (std::any_of(values_.begin(), values_.end(), [](std::uint8_t v) { return v > 1; })) {
    throw InvalidArgument("binary mask: entries must be 0 or 1");
  }
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(values_.begin(), values_.end(), std::uint8_t{1}));
}

SoftMask to_soft(const BinaryMask& mask) {
  SoftMask soft(Shape{mask.height(), mask.width(), 1});
  std::transform(mask.values().begin(), mask.values().end(), soft.values().begin(),
                 [](std::uint8_t v) { return static_cast<float>(v); });
  return soft;
}

}  // namespace changeflow
