#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "changeflow/errors.hpp"

namespace changeflow {

/// Spatial extent plus channel count of an HWC grid.
struct Shape {
  int height = 0;
  int width = 0;
  int channels = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width) *
           static_cast<std::size_t>(channels);
  }
  std::size_t pixels() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& shape);

/// Throws InvalidShape unless every dimension is positive.
void validate_shape(const Shape& shape, const char* what);

/// Throws InvalidShape if the shapes differ.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

/// Dense real grid in height-width-channel order. The tag keeps latents,
/// velocities, features and images from being mixed up by accident.
template <typename Tag>
class Grid {
 public:
  Grid() = default;

  explicit Grid(Shape shape, float fill = 0.0f) : shape_(shape) {
    validate_shape(shape, "grid");
    values_.assign(shape.size(), fill);
  }

  Grid(Shape shape, std::vector<float> values) : shape_(shape), values_(std::move(values)) {
    validate_shape(shape, "grid");
    if (values_.size() != shape.size()) {
      throw InvalidShape("grid: " + std::to_string(values_.size()) + " values for shape " +
                         to_string(shape));
    }
  }

  const Shape& shape() const { return shape_; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  int channels() const { return shape_.channels; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  float& operator()(int y, int x, int c) { return values_[index(y, x, c)]; }
  float operator()(int y, int x, int c) const { return values_[index(y, x, c)]; }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }
  float* data() { return values_.data(); }
  const float* data() const { return values_.data(); }

  bool operator==(const Grid&) const = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * shape_.width + x) * shape_.channels + c;
  }

  Shape shape_;
  std::vector<float> values_;
};

template <typename To, typename From>
Grid<To> grid_cast(const Grid<From>& grid) {
  return Grid<To>(grid.shape(), std::vector<float>(grid.values().begin(), grid.values().end()));
}

/// A stack of equally shaped grids stored contiguously.
template <typename Tag>
class GridBatch {
 public:
  GridBatch() = default;

  GridBatch(int count, Shape shape) : count_(count), shape_(shape) {
    validate_shape(shape, "grid batch");
    if (count < 1) throw InvalidShape("grid batch: count must be positive");
    values_.assign(static_cast<std::size_t>(count) * shape.size(), 0.0f);
  }

  static GridBatch stack(std::span<const Grid<Tag>> items) {
    if (items.empty()) throw InvalidShape("grid batch: nothing to stack");
    GridBatch batch(static_cast<int>(items.size()), items.front().shape());
    for (std::size_t i = 0; i < items.size(); ++i) batch.set(static_cast<int>(i), items[i]);
    return batch;
  }

  int count() const { return count_; }
  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }

  Grid<Tag> item(int i) const {
    auto first = values_.begin() + static_cast<std::ptrdiff_t>(i * shape_.size());
    return Grid<Tag>(shape_, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(shape_.size())));
  }

  void set(int i, const Grid<Tag>& grid) {
    require_same_shape(shape_, grid.shape(), "grid batch item");
    std::copy(grid.values().begin(), grid.values().end(),
              values_.begin() + static_cast<std::ptrdiff_t>(i * shape_.size()));
  }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }
  float* data() { return values_.data(); }
  const float* data() const { return values_.data(); }

 private:
  int count_ = 0;
  Shape shape_;
  std::vector<float> values_;
};

struct LatentTag {};
struct VelocityTag {};
struct FeatureTag {};
struct ConditioningTag {};
struct ImageTag {};
struct SoftMaskTag {};

/// h x w x d codec latent; also the flow state x_t.
using Latent = Grid<LatentTag>;
using LatentBatch = GridBatch<LatentTag>;
/// Velocity prediction or target, same shape as the latent.
using VelocitySample = Grid<VelocityTag>;
using VelocityBatch = GridBatch<VelocityTag>;
using FeatureMap = Grid<FeatureTag>;
using ConditioningSignal = Grid<ConditioningTag>;
/// H x W x 3 image with values in [0, 1].
using Image = Grid<ImageTag>;
/// H x W x 1 mask with values in [0, 1].
using SoftMask = Grid<SoftMaskTag>;

/// H x W grid over {0, 1}.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width);
  BinaryMask(int height, int width, std::vector<std::uint8_t> values);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return values_.size(); }

  std::uint8_t operator()(int y, int x) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  void set(int y, int x, bool on) { values_[static_cast<std::size_t>(y) * width_ + x] = on ? 1 : 0; }

  std::span<const std::uint8_t> values() const { return values_; }
  std::size_t count() const;

  bool operator==(const BinaryMask&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> values_;
};

SoftMask to_soft(const BinaryMask& mask);

}  // namespace changeflow
