#include "wsda/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace wsda::gen {

namespace {

// Canonical shape outlines, unit size (fits the unit-diameter circle),
// heading along +x at angle 0.
const std::vector<std::array<double, 2>> kArrowUnit = {
    {0.50, 0.00},  {0.10, 0.25},  {0.10, 0.09},   {-0.48, 0.09},
    {-0.48, -0.09}, {0.10, -0.09}, {0.10, -0.25},
};

const std::vector<std::array<double, 2>> kTeeUnit = {
    {0.38, -0.28}, {0.38, 0.28},  {0.22, 0.28},  {0.22, 0.09},
    {-0.45, 0.09}, {-0.45, -0.09}, {0.22, -0.09}, {0.22, -0.28},
};

int clutter_count(ClutterLevel level) {
  switch (level) {
    case ClutterLevel::none: return 0;
    case ClutterLevel::low: return 3;
    case ClutterLevel::high: return 8;
  }
  return 0;
}

bool point_in_polygon(const std::vector<std::array<double, 2>>& poly, double px, double py) {
  bool inside = false;
  const size_t n = poly.size();
  for (size_t i = 0, j = n - 1; i < n; j = i++) {
    const double xi = poly[i][0], yi = poly[i][1];
    const double xj = poly[j][0], yj = poly[j][1];
    if ((yi > py) != (yj > py)) {
      const double xcross = xj + (py - yj) / (yi - yj) * (xi - xj);
      if (px < xcross) inside = !inside;
    }
  }
  return inside;
}

int sample_class(RngStream& s, const std::array<double, kNumClasses>& freq) {
  const double u = s.uniform();
  double acc = 0.0;
  for (int c = 0; c < kNumClasses; ++c) {
    acc += freq[static_cast<size_t>(c)];
    if (u < acc) return c;
  }
  return kNumClasses - 1;
}

}  // namespace

double canonical_angle_span(int class_id) { return class_id == kClassEllipse ? M_PI : 2.0 * M_PI; }

double fold_angle(double angle, int class_id) {
  const double span = canonical_angle_span(class_id);
  double a = std::fmod(angle, span);
  if (a < 0.0) a += span;
  return a;
}

void DomainConfig::validate() const {
  double sum = 0.0;
  for (double f : class_frequencies) {
    if (f < 0.0) throw std::invalid_argument("class_frequencies must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("class_frequencies must sum to 1");
  if (noise_sigma < 0.0 || noise_sigma > 1.0) throw std::invalid_argument("noise_sigma out of range");
  if (fog_alpha < 0.0 || fog_alpha > 1.0) throw std::invalid_argument("fog_alpha out of range");
  if (brightness_shift < -0.3 || brightness_shift > 0.3)
    throw std::invalid_argument("brightness_shift out of range");
}

int MaskGrid::count() const {
  int n = 0;
  for (uint8_t p : v) n += p;
  return n;
}

Box placement_box(const ObjectSpec& obj) {
  const double r = obj.rendered_size() / 2.0;
  return {obj.cx - r, obj.cy - r, obj.cx + r, obj.cy + r};
}

double box_iou_raw(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a[2], b[2]) - std::max(a[0], b[0]));
  const double iy = std::max(0.0, std::min(a[3], b[3]) - std::max(a[1], b[1]));
  const double inter = ix * iy;
  const double area_a = (a[2] - a[0]) * (a[3] - a[1]);
  const double area_b = (b[2] - b[0]) * (b[3] - b[1]);
  const double uni = area_a + area_b - inter;
  return uni <= 0.0 ? 0.0 : inter / uni;
}

SceneSpec sample_scene(RngStream stream, const DomainConfig& config, DomainTag domain) {
  config.validate();
  SceneSpec scene;
  scene.domain = domain;
  scene.background_seed = stream.fork("background").next_u64();

  RngStream obj_root = stream.fork("objects");
  const int k = 1 + obj_root.uniform_int(kMaxObjects);
  for (int i = 0; i < k; ++i) {
    RngStream s = obj_root.fork(static_cast<uint64_t>(i));
    ObjectSpec obj;
    obj.class_id = sample_class(s, config.class_frequencies);
    obj.base_size = s.uniform(kMinBaseSize, kMaxBaseSize);
    obj.depth = s.uniform(kMinDepth, kMaxDepth);
    obj.angle = s.uniform(0.0, canonical_angle_span(obj.class_id));

    const double r = obj.rendered_size() / 2.0;
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      obj.cx = s.uniform(r, kImageW - r);
      obj.cy = s.uniform(r, kImageH - r);
      placed = true;
      const Box cand = placement_box(obj);
      for (const ObjectSpec& other : scene.objects) {
        if (box_iou_raw(cand, placement_box(other)) > 0.3) {
          placed = false;
          break;
        }
      }
    }
    if (placed) scene.objects.push_back(obj);
  }
  if (scene.objects.empty())
    throw std::runtime_error("sample_scene: could not place any object; domain config is infeasible");
  return scene;
}

std::vector<std::array<double, 2>> shape_polygon(const ObjectSpec& obj) {
  if (obj.class_id == kClassEllipse) return {};
  const auto& unit = obj.class_id == kClassArrow ? kArrowUnit : kTeeUnit;
  const double s = obj.rendered_size();
  const double ca = std::cos(obj.angle), sa = std::sin(obj.angle);
  std::vector<std::array<double, 2>> out;
  out.reserve(unit.size());
  for (const auto& p : unit) {
    const double x = p[0] * s, y = p[1] * s;
    out.push_back({obj.cx + x * ca - y * sa, obj.cy + x * sa + y * ca});
  }
  return out;
}

MaskGrid rasterize_polygon(const std::vector<std::array<double, 2>>& poly, int h, int w) {
  MaskGrid m(h, w);
  double x0 = 1e30, y0 = 1e30, x1 = -1e30, y1 = -1e30;
  for (const auto& p : poly) {
    x0 = std::min(x0, p[0]);
    y0 = std::min(y0, p[1]);
    x1 = std::max(x1, p[0]);
    y1 = std::max(y1, p[1]);
  }
  const int px0 = std::max(0, static_cast<int>(std::floor(x0)));
  const int py0 = std::max(0, static_cast<int>(std::floor(y0)));
  const int px1 = std::min(w - 1, static_cast<int>(std::ceil(x1)));
  const int py1 = std::min(h - 1, static_cast<int>(std::ceil(y1)));
  for (int y = py0; y <= py1; ++y)
    for (int x = px0; x <= px1; ++x)
      if (point_in_polygon(poly, x + 0.5, y + 0.5)) m.at(y, x) = 1;
  return m;
}

MaskGrid rasterize_object(const ObjectSpec& obj, int h, int w) {
  if (obj.class_id != kClassEllipse) return rasterize_polygon(shape_polygon(obj), h, w);

  MaskGrid m(h, w);
  const double a = obj.rendered_size() / 2.0;   // semi-axis along heading
  const double b = obj.rendered_size() / 4.0;   // semi-axis across
  const double ca = std::cos(obj.angle), sa = std::sin(obj.angle);
  const double r = obj.rendered_size() / 2.0;
  const int px0 = std::max(0, static_cast<int>(std::floor(obj.cx - r)));
  const int py0 = std::max(0, static_cast<int>(std::floor(obj.cy - r)));
  const int px1 = std::min(w - 1, static_cast<int>(std::ceil(obj.cx + r)));
  const int py1 = std::min(h - 1, static_cast<int>(std::ceil(obj.cy + r)));
  for (int y = py0; y <= py1; ++y) {
    for (int x = px0; x <= px1; ++x) {
      const double dx = (x + 0.5) - obj.cx;
      const double dy = (y + 0.5) - obj.cy;
      const double u = dx * ca + dy * sa;
      const double v = -dx * sa + dy * ca;
      if ((u * u) / (a * a) + (v * v) / (b * b) <= 1.0) m.at(y, x) = 1;
    }
  }
  return m;
}

Rgb background_pixel_color(const DomainConfig& config, uint64_t background_seed) {
  RngStream tint = RngStream(background_seed).fork("tint");
  Rgb c;
  for (int ch = 0; ch < 3; ++ch) c[static_cast<size_t>(ch)] = config.background[static_cast<size_t>(ch)] + tint.uniform(-0.04, 0.04);
  // far-plane fog, then brightness
  for (int ch = 0; ch < 3; ++ch) {
    double v = c[static_cast<size_t>(ch)];
    v = (1.0 - config.fog_alpha) * v + config.fog_alpha * 0.5;
    v += config.brightness_shift;
    c[static_cast<size_t>(ch)] = std::clamp(v, 0.0, 1.0);
  }
  return c;
}

std::pair<Image, std::vector<MaskGrid>> render_scene(const SceneSpec& scene, const DomainConfig& config,
                                                     RngStream noise_stream) {
  config.validate();
  const int h = kImageH, w = kImageW;

  // background + clutter layer (far plane)
  RngStream bg = RngStream(scene.background_seed);
  RngStream tint = bg.fork("tint");
  Rgb base;
  for (int ch = 0; ch < 3; ++ch) base[static_cast<size_t>(ch)] = config.background[static_cast<size_t>(ch)] + tint.uniform(-0.04, 0.04);
  Image img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = base[static_cast<size_t>(ch)];

  RngStream clutter = bg.fork("clutter");
  const int n_clutter = clutter_count(config.clutter);
  for (int i = 0; i < n_clutter; ++i) {
    const double cx = clutter.uniform(0.0, w);
    const double cy = clutter.uniform(0.0, h);
    const double cr = clutter.uniform(1.0, 3.0);
    Rgb col;
    for (int ch = 0; ch < 3; ++ch) col[static_cast<size_t>(ch)] = clutter.uniform(0.2, 0.8);
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - cr)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - cr)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + cr)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + cr)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = (x + 0.5) - cx, dy = (y + 0.5) - cy;
        if (dx * dx + dy * dy <= cr * cr)
          for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = col[static_cast<size_t>(ch)];
      }
  }

  // draw order: farthest first
  std::vector<int> order(scene.objects.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scene.objects[static_cast<size_t>(a)].depth > scene.objects[static_cast<size_t>(b)].depth;
  });

  std::vector<MaskGrid> pre(scene.objects.size());
  for (size_t i = 0; i < scene.objects.size(); ++i)
    pre[i] = rasterize_object(scene.objects[i], h, w);

  // owner[pixel] = index of the nearest covering object, -1 for background
  std::vector<int> owner(static_cast<size_t>(h) * w, -1);
  for (int oi : order)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (pre[static_cast<size_t>(oi)].at(y, x)) owner[static_cast<size_t>(y) * w + x] = oi;

  std::vector<MaskGrid> visible(scene.objects.size());
  for (size_t i = 0; i < scene.objects.size(); ++i) {
    visible[i] = MaskGrid(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (owner[static_cast<size_t>(y) * w + x] == static_cast<int>(i)) visible[i].at(y, x) = 1;
  }

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int oi = owner[static_cast<size_t>(y) * w + x];
      double fog_w;
      if (oi >= 0) {
        const ObjectSpec& obj = scene.objects[static_cast<size_t>(oi)];
        const Rgb& col = config.palette[static_cast<size_t>(obj.class_id)];
        for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = col[static_cast<size_t>(ch)];
        fog_w = config.fog_alpha * (obj.depth / kMaxDepth);
      } else {
        fog_w = config.fog_alpha;  // far plane
      }
      for (int ch = 0; ch < 3; ++ch) {
        double v = img.at(y, x, ch);
        v = (1.0 - fog_w) * v + fog_w * 0.5;
        v += config.brightness_shift;
        img.at(y, x, ch) = std::clamp(v, 0.0, 1.0);
      }
    }
  }

  if (config.noise_sigma > 0.0) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < 3; ++ch) {
          double v = img.at(y, x, ch) + config.noise_sigma * noise_stream.normal();
          img.at(y, x, ch) = std::clamp(v, 0.0, 1.0);
        }
  }

  return {std::move(img), std::move(visible)};
}

Annotation derive_annotation(const SceneSpec& scene, const std::vector<MaskGrid>& masks, LabelMode mode) {
  if (masks.size() != scene.objects.size())
    throw std::invalid_argument("derive_annotation: mask/object count mismatch");
  Annotation ann;
  ann.has_attributes = mode == LabelMode::full;
  for (size_t i = 0; i < masks.size(); ++i) {
    const MaskGrid& m = masks[i];
    int x0 = m.w, y0 = m.h, x1 = -1, y1 = -1, count = 0;
    for (int y = 0; y < m.h; ++y)
      for (int x = 0; x < m.w; ++x)
        if (m.at(y, x)) {
          ++count;
          x0 = std::min(x0, x);
          y0 = std::min(y0, y);
          x1 = std::max(x1, x);
          y1 = std::max(y1, y);
        }
    if (count < kMinMaskPixels) continue;
    ann.boxes.push_back({static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x1 + 1),
                         static_cast<double>(y1 + 1)});
    ann.classes.push_back(scene.objects[i].class_id);
    if (mode == LabelMode::full) {
      ann.masks.push_back(m);
      ann.angles.push_back(fold_angle(scene.objects[i].angle, scene.objects[i].class_id));
      ann.depths.push_back(scene.objects[i].depth);
    }
  }
  return ann;
}

}  // namespace wsda::gen
