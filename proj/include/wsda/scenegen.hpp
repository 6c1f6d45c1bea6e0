#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "wsda/rng.hpp"

namespace wsda::gen {

constexpr int kImageH = 64;
constexpr int kImageW = 64;
constexpr int kNumClasses = 3;
constexpr int kClassArrow = 0;
constexpr int kClassTee = 1;
constexpr int kClassEllipse = 2;
constexpr int kMinMaskPixels = 16;
constexpr int kMaxObjects = 4;
constexpr double kMinDepth = 1.0;
constexpr double kMaxDepth = 4.0;
constexpr double kMinBaseSize = 20.0;
constexpr double kMaxBaseSize = 36.0;

enum class DomainTag { source, target };
enum class LabelMode { full, weak };
enum class ClutterLevel { none, low, high };
enum class Split { train, val };

using Rgb = std::array<double, 3>;
using Box = std::array<double, 4>;  // x_min, y_min, x_max, y_max

// Arrow and tee use the full turn; the ellipse's 2-fold symmetry collapses
// its canonical range to [0, pi).
double canonical_angle_span(int class_id);
double fold_angle(double angle, int class_id);

struct ObjectSpec {
  int class_id = 0;
  double cx = 0.0, cy = 0.0;  // pixels
  double base_size = 0.0;     // pixels; rendered size = base_size / depth
  double angle = 0.0;
  double depth = 1.0;  // in [1, 4]

  double rendered_size() const { return base_size / depth; }
};

struct SceneSpec {
  std::vector<ObjectSpec> objects;  // 1..4 entries
  uint64_t background_seed = 0;
  DomainTag domain = DomainTag::source;
};

struct DomainConfig {
  std::array<Rgb, kNumClasses> palette{};
  Rgb background{0.6, 0.6, 0.6};
  double noise_sigma = 0.0;       // [0, 1]
  double fog_alpha = 0.0;         // [0, 1]
  double brightness_shift = 0.0;  // [-0.3, 0.3]
  ClutterLevel clutter = ClutterLevel::none;
  std::array<double, kNumClasses> class_frequencies{};
  LabelMode label_mode = LabelMode::full;

  void validate() const;  // throws on out-of-range fields
};

struct MaskGrid {
  int h = 0, w = 0;
  std::vector<uint8_t> v;  // 0/1

  MaskGrid() = default;
  MaskGrid(int hh, int ww) : h(hh), w(ww), v(static_cast<size_t>(hh) * ww, 0) {}
  uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
  uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  int count() const;
};

struct Image {
  int h = 0, w = 0;
  std::vector<double> rgb;  // HWC, [0, 1]

  Image() = default;
  Image(int hh, int ww) : h(hh), w(ww), rgb(static_cast<size_t>(hh) * ww * 3, 0.0) {}
  double& at(int y, int x, int c) { return rgb[(static_cast<size_t>(y) * w + x) * 3 + c]; }
  double at(int y, int x, int c) const { return rgb[(static_cast<size_t>(y) * w + x) * 3 + c]; }
};

struct Annotation {
  std::vector<Box> boxes;
  std::vector<int> classes;
  std::vector<MaskGrid> masks;  // full mode only
  std::vector<double> angles;   // full mode only
  std::vector<double> depths;   // full mode only
  bool has_attributes = false;

  size_t size() const { return boxes.size(); }
};

// Samples a scene with 1..4 objects: classes from class_frequencies, sizes,
// depths and angles uniform, positions rejection-sampled so that the
// conservative placement boxes overlap with IoU <= 0.3. After 100 failed
// placement attempts an object is dropped; an empty scene is an error.
SceneSpec sample_scene(RngStream stream, const DomainConfig& config, DomainTag domain);

// Deterministic rasterization. Objects are drawn back-to-front by depth;
// the returned per-object masks are the pre-occlusion shapes clipped by
// nearer objects. Fog blends toward gray with weight fog_alpha * depth / 4
// (background counts as the far plane, depth 4). Noise is added last from
// noise_stream.
std::pair<Image, std::vector<MaskGrid>> render_scene(const SceneSpec& scene, const DomainConfig& config,
                                                     RngStream noise_stream);

// The color every background pixel takes when noise_sigma = 0 and
// clutter = none (tint from background_seed, fog at the far plane,
// brightness shift, clamped).
Rgb background_pixel_color(const DomainConfig& config, uint64_t background_seed);

// Tight axis-aligned boxes from the clipped masks; objects with fewer than
// kMinMaskPixels visible pixels are dropped. Weak mode strips masks and
// poses.
Annotation derive_annotation(const SceneSpec& scene, const std::vector<MaskGrid>& masks, LabelMode mode);

// Polygon outline of a shape instance in image coordinates (ellipse returns
// an empty list; it is rasterized analytically). Exposed for tests.
std::vector<std::array<double, 2>> shape_polygon(const ObjectSpec& obj);
MaskGrid rasterize_polygon(const std::vector<std::array<double, 2>>& poly, int h, int w);
MaskGrid rasterize_object(const ObjectSpec& obj, int h, int w);

// Conservative square placement box (the shape fits in a circle of diameter
// rendered_size centered on the object).
Box placement_box(const ObjectSpec& obj);
double box_iou_raw(const Box& a, const Box& b);

}  // namespace wsda::gen
