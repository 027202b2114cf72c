#include "changeflow/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <set>

#include "changeflow/png_io.hpp"

namespace changeflow {

ShapeKind parse_shape_kind(const std::string& name) {
  if (name == "rectangle") return ShapeKind::rectangle;
  if (name == "ellipse") return ShapeKind::ellipse;
  if (name == "polygon") return ShapeKind::polygon;
  throw InvalidArgument("unknown shape kind '" + name + "'");
}

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::rectangle: return "rectangle";
    case ShapeKind::ellipse: return "ellipse";
    case ShapeKind::polygon: return "polygon";
  }
  return "?";
}

void GeneratorConfig::validate() const {
  auto fail = [](const std::string& what) { throw InvalidArgument("generator config: " + what); };
  if (image_size < 8) fail("image_size must be at least 8");
  if (min_objects < 1 || max_objects < min_objects) fail("need 1 <= min_objects <= max_objects");
  if (min_object_size < 1 || max_object_size < min_object_size || max_object_size > image_size) {
    fail("need 1 <= min_object_size <= max_object_size <= image_size");
  }
  if (shapes.empty()) fail("at least one shape kind is required");
  auto prob = [&](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) fail(std::string(name) + " must lie in [0, 1]");
  };
  prob(change_prob, "change_prob");
  prob(target_fraction, "target_fraction");
  prob(hard_negative_prob, "hard_negative_prob");
  if (!(fraction_tolerance >= 0.0)) fail("fraction_tolerance must be non-negative");
  if (!(jitter_amplitude >= 0.0 && jitter_amplitude < 1.0)) fail("jitter_amplitude must lie in [0, 1)");
  if (!(pixel_noise >= 0.0)) fail("pixel_noise must be non-negative");
  if (!(texture_scale > 0.0)) fail("texture_scale must be positive");
  if (max_retries < 1) fail("max_retries must be positive");
}

nlohmann::json to_json(const GeneratorConfig& c) {
  nlohmann::json shapes = nlohmann::json::array();
  for (ShapeKind k : c.shapes) shapes.push_back(to_string(k));
  return {{"image_size", c.image_size},
          {"min_objects", c.min_objects},
          {"max_objects", c.max_objects},
          {"min_object_size", c.min_object_size},
          {"max_object_size", c.max_object_size},
          {"shapes", shapes},
          {"change_prob", c.change_prob},
          {"target_fraction", c.target_fraction},
          {"fraction_tolerance", c.fraction_tolerance},
          {"hard_negative_prob", c.hard_negative_prob},
          {"jitter_amplitude", c.jitter_amplitude},
          {"pixel_noise", c.pixel_noise},
          {"texture_scale", c.texture_scale},
          {"max_retries", c.max_retries},
          {"seed", c.seed}};
}

GeneratorConfig generator_config_from_json(const nlohmann::json& j, GeneratorConfig c) {
  if (!j.is_object()) throw InvalidArgument("generator config must be an object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "image_size") c.image_size = value.get<int>();
      else if (key == "min_objects") c.min_objects = value.get<int>();
      else if (key == "max_objects") c.max_objects = value.get<int>();
      else if (key == "min_object_size") c.min_object_size = value.get<int>();
      else if (key == "max_object_size") c.max_object_size = value.get<int>();
      else if (key == "shapes") {
        c.shapes.clear();
        for (const auto& s : value) c.shapes.push_back(parse_shape_kind(s.get<std::string>()));
      } else if (key == "change_prob") c.change_prob = value.get<double>();
      else if (key == "target_fraction") c.target_fraction = value.get<double>();
      else if (key == "fraction_tolerance") c.fraction_tolerance = value.get<double>();
      else if (key == "hard_negative_prob") c.hard_negative_prob = value.get<double>();
      else if (key == "jitter_amplitude") c.jitter_amplitude = value.get<double>();
      else if (key == "pixel_noise") c.pixel_noise = value.get<double>();
      else if (key == "texture_scale") c.texture_scale = value.get<double>();
      else if (key == "max_retries") c.max_retries = value.get<int>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else throw InvalidArgument("unknown generator key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument("generator key '" + key + "': " + e.what());
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Geometry

bool SceneObject::contains(double x, double y) const {
  const double dx = x - cx;
  const double dy = y - cy;
  switch (kind) {
    case ShapeKind::rectangle:
      return std::abs(dx) <= half_w && std::abs(dy) <= half_h;
    case ShapeKind::ellipse: {
      const double c = std::cos(angle), s = std::sin(angle);
      const double u = (c * dx + s * dy) / half_w;
      const double v = (-s * dx + c * dy) / half_h;
      return u * u + v * v <= 1.0;
    }
    case ShapeKind::polygon: {
      // Even-odd ray casting.
      bool inside = false;
      const std::size_t n = vertices.size();
      for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const auto& a = vertices[i];
        const auto& b = vertices[j];
        if ((a[1] > y) != (b[1] > y) && x < (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]) + a[0]) inside = !inside;
      }
      return inside;
    }
  }
  return false;
}

std::vector<int> render_labels(std::span<const SceneObject> objects, int height, int width) {
  std::vector<int> labels(static_cast<std::size_t>(height) * width, 0);
  for (const auto& o : objects) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        if (o.contains(x + 0.5, y + 0.5)) labels[static_cast<std::size_t>(y) * width + x] = o.id;
      }
    }
  }
  return labels;
}

BinaryMask change_mask(std::span<const SceneObject> t1, std::span<const SceneObject> t2, int height, int width) {
  const auto a = render_labels(t1, height, width);
  const auto b = render_labels(t2, height, width);
  std::vector<std::uint8_t> values(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) values[i] = a[i] != b[i] ? 1 : 0;
  return BinaryMask(height, width, std::move(values));
}

Image paint_scene(const Image& background, std::span<const SceneObject> objects) {
  Image out = background;
  const auto labels = render_labels(objects, background.height(), background.width());
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      const int id = labels[static_cast<std::size_t>(y) * out.width() + x];
      if (id == 0) continue;
      const auto it = std::find_if(objects.begin(), objects.end(), [id](const SceneObject& o) { return o.id == id; });
      for (int c = 0; c < 3; ++c) out(y, x, c) = it->color[c];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generation

namespace {

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

/// Multi-octave value noise in [0, 1] with smoothstep interpolation.
std::vector<double> value_noise(int size, double period, Rng& rng) {
  std::vector<double> out(static_cast<std::size_t>(size) * size, 0.0);
  double amplitude = 1.0, total = 0.0;
  for (int octave = 0; octave < 3; ++octave, period /= 2.0, amplitude /= 2.0) {
    const double step = std::max(period, 2.0);
    const int cells = static_cast<int>(std::ceil(size / step)) + 2;
    std::vector<double> lattice(static_cast<std::size_t>(cells) * cells);
    for (auto& v : lattice) v = uniform01(rng);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double fx = x / step, fy = y / step;
        const int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
        double tx = fx - ix, ty = fy - iy;
        tx = tx * tx * (3 - 2 * tx);
        ty = ty * ty * (3 - 2 * ty);
        auto at = [&](int yy, int xx) { return lattice[static_cast<std::size_t>(yy) * cells + xx]; };
        const double top = at(iy, ix) * (1 - tx) + at(iy, ix + 1) * tx;
        const double bottom = at(iy + 1, ix) * (1 - tx) + at(iy + 1, ix + 1) * tx;
        out[static_cast<std::size_t>(y) * size + x] += amplitude * (top * (1 - ty) + bottom * ty);
      }
    }
    total += amplitude;
  }
  for (auto& v : out) v /= total;
  return out;
}

/// Muted terrain-like background: two colours blended by value noise plus a
/// low-frequency linear gradient.
Image make_background(const GeneratorConfig& config, Rng& rng) {
  const int n = config.image_size;
  std::array<double, 3> a{}, b{};
  const double base = uniform(rng, 0.3, 0.6);
  for (int c = 0; c < 3; ++c) {
    a[c] = base + uniform(rng, -0.08, 0.08);
    b[c] = base + uniform(rng, -0.15, 0.15);
  }
  const auto noise = value_noise(n, config.texture_scale, rng);
  const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double ramp = uniform(rng, 0.0, 0.1);
  Image img(Shape{n, n, 3});
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double t = noise[static_cast<std::size_t>(y) * n + x];
      const double g = ramp * ((x / double(n) - 0.5) * std::cos(angle) + (y / double(n) - 0.5) * std::sin(angle));
      for (int c = 0; c < 3; ++c) img(y, x, c) = static_cast<float>(std::clamp(a[c] * (1 - t) + b[c] * t + g, 0.0, 1.0));
    }
  }
  return img;
}

/// Saturated colour at least `min_distance` (max-channel) from every colour in `used`.
std::array<float, 3> pick_color(Rng& rng, const std::vector<std::array<float, 3>>& used) {
  std::array<float, 3> color{};
  for (int attempt = 0; attempt < 32; ++attempt) {
    const double hue = uniform(rng, 0.0, 6.0);
    const double value = uniform(rng, 0.75, 1.0);
    const double low = value * uniform(rng, 0.0, 0.3);
    const int sector = static_cast<int>(hue) % 6;
    const double frac = hue - std::floor(hue);
    const double rise = low + (value - low) * frac;
    const double fall = value - (value - low) * frac;
    std::array<double, 3> rgb{};
    switch (sector) {
      case 0: rgb = {value, rise, low}; break;
      case 1: rgb = {fall, value, low}; break;
      case 2: rgb = {low, value, rise}; break;
      case 3: rgb = {low, fall, value}; break;
      case 4: rgb = {rise, low, value}; break;
      default: rgb = {value, low, fall}; break;
    }
    // Occasionally dark objects, so brightness alone does not reveal change.
    if (uniform01(rng) < 0.3) for (auto& v : rgb) v *= 0.3;
    for (int c = 0; c < 3; ++c) color[c] = static_cast<float>(rgb[c]);
    bool distinct = true;
    for (const auto& u : used) {
      float d = 0.0f;
      for (int c = 0; c < 3; ++c) d = std::max(d, std::abs(u[c] - color[c]));
      distinct = distinct && d >= 0.3f;
    }
    if (distinct) break;
  }
  return color;
}

SceneObject random_object(const GeneratorConfig& config, int id, Rng& rng, std::vector<std::array<float, 3>>& used,
                          std::optional<std::array<double, 2>> centre = std::nullopt) {
  SceneObject o;
  o.id = id;
  o.kind = config.shapes[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(config.shapes.size()) - 1))];
  const double w = uniform_int(rng, config.min_object_size, config.max_object_size);
  const double h = uniform_int(rng, config.min_object_size, config.max_object_size);
  o.half_w = w / 2.0;
  o.half_h = h / 2.0;
  const double n = config.image_size;
  if (centre) {
    o.cx = (*centre)[0];
    o.cy = (*centre)[1];
  } else {
    o.cx = uniform(rng, o.half_w, n - o.half_w);
    o.cy = uniform(rng, o.half_h, n - o.half_h);
  }
  o.angle = uniform(rng, 0.0, std::numbers::pi);
  const int count = uniform_int(rng, 5, 7);
  for (int i = 0; i < count; ++i) {
    const double a = 2.0 * std::numbers::pi * (i + uniform(rng, -0.3, 0.3)) / count;
    const double r = uniform(rng, 0.6, 1.0);
    o.vertices.push_back({o.cx + r * o.half_w * std::cos(a), o.cy + r * o.half_h * std::sin(a)});
  }
  o.color = pick_color(rng, used);
  used.push_back(o.color);
  return o;
}

SceneObject displaced(const SceneObject& o, const GeneratorConfig& config, Rng& rng) {
  SceneObject moved = o;
  const double n = config.image_size;
  const double size = std::max(o.half_w, o.half_h) * 2.0;
  const double distance = uniform(rng, 0.5 * size, 1.5 * size);
  const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double nx = std::clamp(o.cx + distance * std::cos(angle), o.half_w, n - o.half_w);
  const double ny = std::clamp(o.cy + distance * std::sin(angle), o.half_h, n - o.half_h);
  moved.cx = nx;
  moved.cy = ny;
  for (auto& v : moved.vertices) {
    v[0] += nx - o.cx;
    v[1] += ny - o.cy;
  }
  return moved;
}

/// Brightness / contrast jitter plus sensor noise. Never touches the mask.
void photometric(Image& img, const GeneratorConfig& config, bool jitter, Rng& rng) {
  const double a = config.jitter_amplitude;
  const double brightness = jitter ? uniform(rng, -a, a) : 0.0;
  const double contrast = jitter ? uniform(rng, 1.0 - a, 1.0 + a) : 1.0;
  std::normal_distribution<double> noise(0.0, config.pixel_noise);
  for (float& v : img.values()) {
    const double e = config.pixel_noise > 0.0 ? noise(rng) : 0.0;
    v = static_cast<float>(std::clamp((v - 0.5) * contrast + 0.5 + brightness + e, 0.0, 1.0));
  }
}

std::string sample_id(std::uint64_t index) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "s%05llu", static_cast<unsigned long long>(index));
  return buffer;
}

}  // namespace

ChangeSample generate_sample(const GeneratorConfig& config, std::uint64_t index) {
  config.validate();
  const std::uint64_t sample_seed = mix_seed(config.seed, index);
  const int n = config.image_size;
  // Drawn once per sample so band rejections cannot skew the negative rate.
  Rng decision(mix_seed(sample_seed, 0));
  const bool hard_negative = uniform01(decision) < config.hard_negative_prob;
  double last_fraction = 0.0;
  for (int attempt = 0; attempt < config.max_retries; ++attempt) {
    Rng rng(mix_seed(sample_seed, static_cast<std::uint64_t>(attempt) + 1));
    const Image background = make_background(config, rng);
    const int count = uniform_int(rng, config.min_objects, config.max_objects);
    std::vector<SceneObject> t1, t2;
    std::vector<std::array<float, 3>> used;
    int next_id = 1;
    for (int i = 0; i < count; ++i) {
      SceneObject o = random_object(config, next_id++, rng, used);
      const bool changes = !hard_negative && uniform01(rng) < config.change_prob;
      if (!changes) {
        t1.push_back(o);
        t2.push_back(o);
        continue;
      }
      switch (uniform_int(rng, 0, 3)) {
        case 0:  // insertion
          t2.push_back(o);
          break;
        case 1:  // removal
          t1.push_back(o);
          break;
        case 2: {  // replacement at the same place
          t1.push_back(o);
          t2.push_back(random_object(config, next_id++, rng, used, std::array<double, 2>{o.cx, o.cy}));
          break;
        }
        default:  // displacement, same id
          t1.push_back(o);
          t2.push_back(displaced(o, config, rng));
          break;
      }
    }
    ChangeSample sample;
    sample.id = sample_id(index);
    sample.mask = change_mask(t1, t2, n, n);
    sample.pair.t1 = paint_scene(background, t1);
    sample.pair.t2 = paint_scene(background, t2);
    const bool jitter_both = uniform01(rng) < 0.5;
    photometric(sample.pair.t1, config, jitter_both, rng);
    photometric(sample.pair.t2, config, true, rng);

    const double fraction = static_cast<double>(sample.mask.count()) / sample.mask.size();
    last_fraction = fraction;
    const bool unconstrained = hard_negative || config.change_prob == 0.0;
    if (unconstrained || std::abs(fraction - config.target_fraction) <= config.fraction_tolerance) return sample;
  }
  throw GenerationError("sample " + std::to_string(index) + ": changed fraction stayed outside " +
                        std::to_string(config.target_fraction) + " +- " + std::to_string(config.fraction_tolerance) +
                        " after " + std::to_string(config.max_retries) + " attempts (last " +
                        std::to_string(last_fraction) + ")");
}

std::vector<ChangeSample> generate_dataset(const GeneratorConfig& config, int n) {
  if (n < 1) throw InvalidArgument("generate_dataset: n must be at least 1");
  std::vector<ChangeSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(generate_sample(config, static_cast<std::uint64_t>(i)));
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

namespace {

/// Source coordinate of output pixel (y, x) under `ops` on an n x n grid.
std::pair<int, int> source_of(int y, int x, int n, const AugmentOps& ops) {
  // Undo in reverse order: rotations, then vflip, then hflip.
  for (int r = 0; r < ops.rotations; ++r) {
    // Counter-clockwise quarter turn: out(y, x) = in(x, n - 1 - y).
    const int sy = x, sx = n - 1 - y;
    y = sy;
    x = sx;
  }
  if (ops.vflip) y = n - 1 - y;
  if (ops.hflip) x = n - 1 - x;
  return {y, x};
}

template <typename Tag>
Grid<Tag> remap(const Grid<Tag>& g, const AugmentOps& ops) {
  Grid<Tag> out(g.shape());
  const int n = g.height();
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const auto [sy, sx] = source_of(y, x, n, ops);
      for (int c = 0; c < g.channels(); ++c) out(y, x, c) = g(sy, sx, c);
    }
  }
  return out;
}

BinaryMask remap(const BinaryMask& m, const AugmentOps& ops) {
  BinaryMask out(m.height(), m.width());
  const int n = m.height();
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const auto [sy, sx] = source_of(y, x, n, ops);
      out.set(y, x, m(sy, sx) != 0);
    }
  }
  return out;
}

}  // namespace

ChangeSample apply_augment(const ChangeSample& sample, const AugmentOps& ops) {
  const int n = sample.mask.height();
  if (sample.mask.width() != n || sample.pair.t1.height() != n || sample.pair.t1.width() != n ||
      sample.pair.t2.shape() != sample.pair.t1.shape()) {
    throw InvalidShape("augment: sample must be square with matching images and mask");
  }
  ChangeSample out;
  out.id = sample.id;
  out.pair.t1 = remap(sample.pair.t1, ops);
  out.pair.t2 = remap(sample.pair.t2, ops);
  out.mask = remap(sample.mask, ops);
  return out;
}

ChangeSample augment(const ChangeSample& sample, Rng& rng, AugmentOps* applied) {
  AugmentOps ops;
  ops.hflip = uniform01(rng) < kAugmentProb;
  ops.vflip = uniform01(rng) < kAugmentProb;
  if (uniform01(rng) < kAugmentProb) ops.rotations = uniform_int(rng, 1, 3);
  if (applied != nullptr) *applied = ops;
  return apply_augment(sample, ops);
}

double changed_fraction(std::span<const ChangeSample> samples) {
  std::size_t changed = 0, total = 0;
  for (const auto& s : samples) {
    changed += s.mask.count();
    total += s.mask.size();
  }
  return total == 0 ? 0.0 : static_cast<double>(changed) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Disk layout

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw InvalidArgument("unknown split '" + name + "'");
}

Split split_of(const std::string& id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  const auto bucket = h % 100;
  if (bucket < 70) return Split::train;
  if (bucket < 85) return Split::val;
  return Split::test;
}

ChangeSample load_sample(const std::filesystem::path& t1, const std::filesystem::path& t2,
                         const std::filesystem::path& mask, std::string id) {
  ChangeSample s;
  s.id = id.empty() ? mask.stem().string() : std::move(id);
  s.pair.t1 = read_rgb_png(t1);
  s.pair.t2 = read_rgb_png(t2);
  s.mask = read_mask_png(mask);
  if (s.pair.t2.shape() != s.pair.t1.shape()) {
    throw LoadError("image size mismatch between " + t1.string() + " and " + t2.string());
  }
  if (s.mask.height() != s.pair.t1.height() || s.mask.width() != s.pair.t1.width()) {
    throw LoadError("mask " + mask.string() + " does not match the image size");
  }
  return s;
}

void save_sample(const ChangeSample& sample, const std::filesystem::path& t1, const std::filesystem::path& t2,
                 const std::filesystem::path& mask) {
  write_rgb_png(t1, sample.pair.t1);
  write_rgb_png(t2, sample.pair.t2);
  write_mask_png(mask, sample.mask);
}

void write_dataset(const std::filesystem::path& root, std::span<const ChangeSample> samples,
                   const GeneratorConfig& config) {
  nlohmann::json splits = {{"train", nlohmann::json::array()},
                           {"val", nlohmann::json::array()},
                           {"test", nlohmann::json::array()}};
  for (const auto& s : samples) {
    const std::string split = to_string(split_of(s.id));
    const auto dir = root / split;
    save_sample(s, dir / "t1" / (s.id + ".png"), dir / "t2" / (s.id + ".png"), dir / "mask" / (s.id + ".png"));
    splits[split].push_back(s.id);
  }
  const nlohmann::json manifest = {{"version", 1},
                                   {"seed", config.seed},
                                   {"count", samples.size()},
                                   {"changed_fraction", changed_fraction(samples)},
                                   {"generator", to_json(config)},
                                   {"splits", splits}};
  std::ofstream out(root / "manifest.json");
  if (!out) throw Error("cannot write " + (root / "manifest.json").string());
  out << manifest.dump(2) << '\n';
  if (!out) throw Error("failed writing " + (root / "manifest.json").string());
}

std::vector<ChangeSample> load_split(const std::filesystem::path& root, Split split) {
  const auto path = root / "manifest.json";
  std::ifstream in(path);
  if (!in) throw LoadError("missing manifest " + path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed manifest " + path.string() + ": " + e.what());
  }
  const std::string name = to_string(split);
  std::vector<ChangeSample> out;
  const auto dir = root / name;
  for (const auto& id_json : manifest.at("splits").at(name)) {
    const auto id = id_json.get<std::string>();
    out.push_back(load_sample(dir / "t1" / (id + ".png"), dir / "t2" / (id + ".png"), dir / "mask" / (id + ".png"), id));
  }
  return out;
}

}  // namespace changeflow
