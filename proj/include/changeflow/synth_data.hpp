#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "changeflow/conditioning.hpp"
#include "changeflow/grid.hpp"
#include "changeflow/rng.hpp"

namespace changeflow {

enum class ShapeKind { rectangle, ellipse, polygon };

ShapeKind parse_shape_kind(const std::string& name);
std::string to_string(ShapeKind kind);

struct GeneratorConfig {
  int image_size = 64;
  int min_objects = 2;
  int max_objects = 5;
  /// Bounding-box side range in pixels.
  int min_object_size = 10;
  int max_object_size = 22;
  std::vector<ShapeKind> shapes = {ShapeKind::rectangle, ShapeKind::ellipse, ShapeKind::polygon};
  /// Probability that a given object takes part in a change.
  double change_prob = 0.5;
  /// Per-sample changed-pixel fraction is kept within target +- tolerance.
  double target_fraction = 0.08;
  double fraction_tolerance = 0.05;
  /// Share of samples with no object change, only photometric nuisance.
  double hard_negative_prob = 0.1;
  /// Brightness offset and contrast deviation bound.
  double jitter_amplitude = 0.1;
  /// Standard deviation of independent per-pixel sensor noise.
  double pixel_noise = 0.02;
  /// Period, in pixels, of the coarsest background noise octave.
  double texture_scale = 16.0;
  int max_retries = 64;
  std::uint64_t seed = 0;

  /// Throws InvalidArgument on inconsistent settings.
  void validate() const;
};

nlohmann::json to_json(const GeneratorConfig& config);
/// Unknown keys are rejected with InvalidArgument.
GeneratorConfig generator_config_from_json(const nlohmann::json& j, GeneratorConfig base = {});

struct ChangeSample {
  std::string id;
  ImagePair pair;
  BinaryMask mask;
};

/// One object in a scene. Geometry is in pixel coordinates; polygon vertices
/// are stored explicitly.
struct SceneObject {
  int id = 0;
  ShapeKind kind = ShapeKind::rectangle;
  double cx = 0.0;
  double cy = 0.0;
  double half_w = 0.0;
  double half_h = 0.0;
  double angle = 0.0;
  std::vector<std::array<double, 2>> vertices;
  std::array<float, 3> color{};

  bool contains(double x, double y) const;
};

/// Object id covering each pixel (0 for background); later objects occlude
/// earlier ones.
std::vector<int> render_labels(std::span<const SceneObject> objects, int height, int width);

/// Pixels whose label differs between the two scenes. A displaced object
/// keeps its id, so both footprints count; a replacement gets a new id.
BinaryMask change_mask(std::span<const SceneObject> t1, std::span<const SceneObject> t2, int height, int width);

/// Paints objects over a background image.
Image paint_scene(const Image& background, std::span<const SceneObject> objects);

/// Deterministic sample `index` of the generator stream. Throws
/// GenerationError when the change-fraction band cannot be met within
/// max_retries attempts.
ChangeSample generate_sample(const GeneratorConfig& config, std::uint64_t index);

/// Samples 0 .. n-1; ids are "s00000", "s00001", ...
std::vector<ChangeSample> generate_dataset(const GeneratorConfig& config, int n);

/// Geometric operations drawn by augment().
struct AugmentOps {
  bool hflip = false;
  bool vflip = false;
  /// Quarter turns counter-clockwise, 0 .. 3.
  int rotations = 0;
};

inline constexpr double kAugmentProb = 0.3;

/// Horizontal flip, vertical flip and a rotation by a non-zero multiple of 90
/// degrees, each with probability 0.3, applied identically to both images and
/// the mask. Requires square samples.
ChangeSample augment(const ChangeSample& sample, Rng& rng, AugmentOps* applied = nullptr);
ChangeSample apply_augment(const ChangeSample& sample, const AugmentOps& ops);

/// Changed-pixel fraction over the whole collection.
double changed_fraction(std::span<const ChangeSample> samples);

enum class Split { train, val, test };
std::string to_string(Split split);
Split parse_split(const std::string& name);

/// 70 / 15 / 15 assignment from an FNV-1a hash of the id.
Split split_of(const std::string& id);

ChangeSample load_sample(const std::filesystem::path& t1, const std::filesystem::path& t2,
                         const std::filesystem::path& mask, std::string id = "");
void save_sample(const ChangeSample& sample, const std::filesystem::path& t1, const std::filesystem::path& t2,
                 const std::filesystem::path& mask);

/// Writes <root>/{train,val,test}/{t1,t2,mask}/<id>.png and manifest.json.
void write_dataset(const std::filesystem::path& root, std::span<const ChangeSample> samples,
                   const GeneratorConfig& config);

/// Loads every sample listed for `split` in the manifest, in manifest order.
std::vector<ChangeSample> load_split(const std::filesystem::path& root, Split split);

}  // namespace changeflow
