#include "wsda/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "wsda/rng.hpp"

namespace wsda::net {

std::string to_string(AlignMode m) {
  switch (m) {
    case AlignMode::none: return "none";
    case AlignMode::class_agnostic: return "class_agnostic";
    case AlignMode::class_wise: return "class_wise";
    case AlignMode::image_level: return "image_level";
  }
  return "none";
}

AlignMode align_mode_from_string(const std::string& s) {
  if (s == "none") return AlignMode::none;
  if (s == "class_agnostic") return AlignMode::class_agnostic;
  if (s == "class_wise") return AlignMode::class_wise;
  if (s == "image_level") return AlignMode::image_level;
  throw std::invalid_argument("unknown alignment mode: " + s);
}

namespace {

Tensor he_init(std::vector<int> dims, int fan_in, RngStream s) {
  Tensor t(std::move(dims));
  const double std_dev = std::sqrt(2.0 / fan_in);
  for (int i = 0; i < t.size(); ++i) t[i] = std_dev * s.normal();
  return t;
}

constexpr int kRoiFlat = kRoiSize * kRoiSize * kFeatChannels;

}  // namespace

ModelParams ModelParams::create(uint64_t seed) {
  ModelParams p;
  RngStream root(seed);
  auto conv = [&](const std::string& name, ParamGroup g, int kh, int kw, int ci, int co) {
    p.params_.push_back({name + ".w", g, he_init({kh, kw, ci, co}, kh * kw * ci, root.fork(name + ".w"))});
    p.params_.push_back({name + ".b", g, Tensor({co})});
  };
  auto fc = [&](const std::string& name, ParamGroup g, int out, int in) {
    p.params_.push_back({name + ".w", g, he_init({out, in}, in, root.fork(name + ".w"))});
    p.params_.push_back({name + ".b", g, Tensor({out})});
  };

  conv("backbone.conv1", ParamGroup::detector, 3, 3, 3, 16);
  conv("backbone.conv2", ParamGroup::detector, 3, 3, 16, kFeatChannels);
  conv("backbone.conv3", ParamGroup::detector, 3, 3, kFeatChannels, kFeatChannels);
  conv("backbone.conv4", ParamGroup::detector, 3, 3, kFeatChannels, kFeatChannels);
  conv("det.head", ParamGroup::detector, 1, 1, kFeatChannels, kDetChannels);
  // background-heavy grids: start objectness pessimistic
  p.tensor(p.index_of("det.head.b"))[0] = -2.0;

  conv("mask.conv1", ParamGroup::attributes, 3, 3, kFeatChannels, kFeatChannels);
  conv("mask.conv2", ParamGroup::attributes, 3, 3, kFeatChannels, 1);
  fc("pose.fc1", ParamGroup::attributes, 64, kRoiFlat + gen::kNumClasses);
  fc("pose.fc2", ParamGroup::attributes, 3, 64);

  fc("domain_cw.fc1", ParamGroup::domain, 64, kRoiFlat);
  fc("domain_cw.fc2", ParamGroup::domain, gen::kNumClasses, 64);
  fc("domain_ca.fc1", ParamGroup::domain, 64, kRoiFlat);
  fc("domain_ca.fc2", ParamGroup::domain, 1, 64);
  fc("domain_img.fc1", ParamGroup::domain, 64, kFeatChannels);
  fc("domain_img.fc2", ParamGroup::domain, 1, 64);
  return p;
}

int ModelParams::index_of(const std::string& name) const {
  for (size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return static_cast<int>(i);
  throw std::invalid_argument("unknown parameter: " + name);
}

const ParamIds& ParamIds::get(const ModelParams& p) {
  static const ParamIds ids = [&p]() {
    ParamIds r;
    r.conv1_w = p.index_of("backbone.conv1.w");
    r.conv1_b = p.index_of("backbone.conv1.b");
    r.conv2_w = p.index_of("backbone.conv2.w");
    r.conv2_b = p.index_of("backbone.conv2.b");
    r.conv3_w = p.index_of("backbone.conv3.w");
    r.conv3_b = p.index_of("backbone.conv3.b");
    r.conv4_w = p.index_of("backbone.conv4.w");
    r.conv4_b = p.index_of("backbone.conv4.b");
    r.det_w = p.index_of("det.head.w");
    r.det_b = p.index_of("det.head.b");
    r.mask1_w = p.index_of("mask.conv1.w");
    r.mask1_b = p.index_of("mask.conv1.b");
    r.mask2_w = p.index_of("mask.conv2.w");
    r.mask2_b = p.index_of("mask.conv2.b");
    r.pose1_w = p.index_of("pose.fc1.w");
    r.pose1_b = p.index_of("pose.fc1.b");
    r.pose2_w = p.index_of("pose.fc2.w");
    r.pose2_b = p.index_of("pose.fc2.b");
    r.dom_cw1_w = p.index_of("domain_cw.fc1.w");
    r.dom_cw1_b = p.index_of("domain_cw.fc1.b");
    r.dom_cw2_w = p.index_of("domain_cw.fc2.w");
    r.dom_cw2_b = p.index_of("domain_cw.fc2.b");
    r.dom_ca1_w = p.index_of("domain_ca.fc1.w");
    r.dom_ca1_b = p.index_of("domain_ca.fc1.b");
    r.dom_ca2_w = p.index_of("domain_ca.fc2.w");
    r.dom_ca2_b = p.index_of("domain_ca.fc2.b");
    r.dom_img1_w = p.index_of("domain_img.fc1.w");
    r.dom_img1_b = p.index_of("domain_img.fc1.b");
    r.dom_img2_w = p.index_of("domain_img.fc2.w");
    r.dom_img2_b = p.index_of("domain_img.fc2.b");
    return r;
  }();
  return ids;
}

Binding bind_params(ad::Graph& g, const ModelParams& p) {
  Binding b;
  b.vars.reserve(static_cast<size_t>(p.count()));
  for (int i = 0; i < p.count(); ++i) b.vars.push_back(g.param(p.tensor(i)));
  return b;
}

ad::Var image_leaf(ad::Graph& g, const Image& img) {
  Tensor t({img.h, img.w, 3});
  std::copy(img.rgb.begin(), img.rgb.end(), t.data());
  return g.leaf(std::move(t));
}

ad::Var backbone_forward(ad::Graph& g, const Binding& b, const ModelParams& p, ad::Var image) {
  const Tensor& im = image->val();
  if (im.ndim() != 3 || im.dim(0) != gen::kImageH || im.dim(1) != gen::kImageW || im.dim(2) != 3)
    throw std::invalid_argument("backbone_forward: expected 64x64x3 input");
  const ParamIds& id = ParamIds::get(p);
  ad::Var x = g.relu(g.conv2d(image, b[id.conv1_w], b[id.conv1_b], 2, 1));
  x = g.relu(g.conv2d(x, b[id.conv2_w], b[id.conv2_b], 2, 1));
  x = g.relu(g.conv2d(x, b[id.conv3_w], b[id.conv3_b], 1, 1));
  x = g.relu(g.conv2d(x, b[id.conv4_w], b[id.conv4_b], 1, 1));
  return x;
}

ad::Var detection_head_forward(ad::Graph& g, const Binding& b, const ModelParams& p, ad::Var feat) {
  const ParamIds& id = ParamIds::get(p);
  return g.conv2d(feat, b[id.det_w], b[id.det_b], 1, 0);
}

ad::Var roi_extract(ad::Graph& g, ad::Var feat, const Box& box) {
  return g.roi_bilinear(feat, box, kRoiSize, kFeatStride);
}

ad::Var mask_head_logits(ad::Graph& g, const Binding& b, const ModelParams& p, ad::Var roi) {
  const ParamIds& id = ParamIds::get(p);
  ad::Var x = g.relu(g.conv2d(roi, b[id.mask1_w], b[id.mask1_b], 1, 1));
  x = g.upsample2x(x);
  return g.conv2d(x, b[id.mask2_w], b[id.mask2_b], 1, 1);
}

ad::Var mask_head_forward(ad::Graph& g, const Binding& b, const ModelParams& p, ad::Var roi) {
  return g.sigmoid(mask_head_logits(g, b, p, roi));
}

ad::Var pose_head_forward(ad::Graph& g, const Binding& b, const ModelParams& p, ad::Var roi, int class_id) {
  if (class_id < 0 || class_id >= gen::kNumClasses)
    throw std::invalid_argument("pose_head_forward: class_id out of range");
  const ParamIds& id = ParamIds::get(p);
  Tensor onehot({gen::kNumClasses});
  onehot[class_id] = 1.0;
  ad::Var x = g.concat(roi, g.leaf(std::move(onehot)));
  x = g.relu(g.fc(x, b[id.pose1_w], b[id.pose1_b]));
  return g.fc(x, b[id.pose2_w], b[id.pose2_b]);
}

ad::Var domain_logits(ad::Graph& g, const Binding& b, const ModelParams& p, ad::Var roi_reversed,
                      AlignMode mode) {
  const ParamIds& id = ParamIds::get(p);
  if (mode == AlignMode::class_wise) {
    ad::Var x = g.relu(g.fc(roi_reversed, b[id.dom_cw1_w], b[id.dom_cw1_b]));
    return g.fc(x, b[id.dom_cw2_w], b[id.dom_cw2_b]);
  }
  if (mode == AlignMode::class_agnostic) {
    ad::Var x = g.relu(g.fc(roi_reversed, b[id.dom_ca1_w], b[id.dom_ca1_b]));
    return g.fc(x, b[id.dom_ca2_w], b[id.dom_ca2_b]);
  }
  throw std::invalid_argument("domain_logits: instance-level mode expected");
}

ad::Var domain_classifier_forward(ad::Graph& g, const Binding& b, const ModelParams& p, ad::Var roi,
                                  int class_id, AlignMode mode, double lambda_grl) {
  ad::Var reversed = g.gradient_reversal(roi, lambda_grl);
  ad::Var logits = domain_logits(g, b, p, reversed, mode);
  if (mode == AlignMode::class_wise) {
    if (class_id < 0 || class_id >= gen::kNumClasses)
      throw std::invalid_argument("domain_classifier_forward: class_id out of range");
    return g.sigmoid(g.index(logits, class_id));
  }
  return g.sigmoid(g.index(logits, 0));
}

ad::Var image_domain_prob(ad::Graph& g, const Binding& b, const ModelParams& p, ad::Var feat,
                          double lambda_grl) {
  const ParamIds& id = ParamIds::get(p);
  ad::Var pooled = g.global_avg_pool(feat);
  ad::Var reversed = g.gradient_reversal(pooled, lambda_grl);
  ad::Var x = g.relu(g.fc(reversed, b[id.dom_img1_w], b[id.dom_img1_b]));
  return g.sigmoid(g.index(g.fc(x, b[id.dom_img2_w], b[id.dom_img2_b]), 0));
}

std::array<double, 4> encode_box(const Box& box, int cell_row, int cell_col) {
  const double cx = 0.5 * (box[0] + box[2]);
  const double cy = 0.5 * (box[1] + box[3]);
  const double w = box[2] - box[0];
  const double h = box[3] - box[1];
  if (w <= 0.0 || h <= 0.0) throw std::invalid_argument("encode_box: degenerate box");
  return {cx / kFeatStride - (cell_col + 0.5), cy / kFeatStride - (cell_row + 0.5),
          std::log(w / kBoxRefSize), std::log(h / kBoxRefSize)};
}

Box decode_box(const std::array<double, 4>& delta, int cell_row, int cell_col) {
  const double cx = (cell_col + 0.5 + delta[0]) * kFeatStride;
  const double cy = (cell_row + 0.5 + delta[1]) * kFeatStride;
  const double w = kBoxRefSize * std::exp(delta[2]);
  const double h = kBoxRefSize * std::exp(delta[3]);
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

std::pair<int, int> center_cell(const Box& box) {
  const double cx = 0.5 * (box[0] + box[2]);
  const double cy = 0.5 * (box[1] + box[3]);
  int col = std::clamp(static_cast<int>(cx / kFeatStride), 0, kGridW - 1);
  int row = std::clamp(static_cast<int>(cy / kFeatStride), 0, kGridH - 1);
  return {row, col};
}

namespace {

double sigmoid_d(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

double clamped_box_iou(const Box& a, const Box& b) { return gen::box_iou_raw(a, b); }

}  // namespace

std::vector<Detection> decode_detections(const Tensor& det_out, double score_threshold, double nms_iou) {
  if (det_out.ndim() != 3 || det_out.dim(2) != kDetChannels)
    throw std::invalid_argument("decode_detections: bad tensor shape");
  if (score_threshold < 0.0 || score_threshold > 1.0 || nms_iou < 0.0 || nms_iou > 1.0)
    throw std::invalid_argument("decode_detections: thresholds must lie in [0,1]");
  const int gh = det_out.dim(0), gw = det_out.dim(1);

  struct Cand {
    Detection det;
    int cell;
  };
  std::vector<Cand> cands;
  for (int r = 0; r < gh; ++r) {
    for (int c = 0; c < gw; ++c) {
      const double* v = det_out.data() + (static_cast<size_t>(r) * gw + c) * kDetChannels;
      const double obj = sigmoid_d(v[0]);
      // softmax over class logits
      double zmax = v[1];
      for (int k = 1; k < gen::kNumClasses; ++k) zmax = std::max(zmax, v[1 + k]);
      double lse = 0.0;
      for (int k = 0; k < gen::kNumClasses; ++k) lse += std::exp(v[1 + k] - zmax);
      int best = 0;
      double best_p = 0.0;
      for (int k = 0; k < gen::kNumClasses; ++k) {
        const double pk = std::exp(v[1 + k] - zmax) / lse;
        if (pk > best_p) {
          best_p = pk;
          best = k;
        }
      }
      const double score = obj * best_p;
      if (score < score_threshold) continue;
      std::array<double, 4> delta{v[1 + gen::kNumClasses], v[2 + gen::kNumClasses],
                                  v[3 + gen::kNumClasses], v[4 + gen::kNumClasses]};
      Box box = decode_box(delta, r, c);
      box[0] = std::clamp(box[0], 0.0, static_cast<double>(gen::kImageW));
      box[1] = std::clamp(box[1], 0.0, static_cast<double>(gen::kImageH));
      box[2] = std::clamp(box[2], 0.0, static_cast<double>(gen::kImageW));
      box[3] = std::clamp(box[3], 0.0, static_cast<double>(gen::kImageH));
      if (box[2] - box[0] < 1e-6 || box[3] - box[1] < 1e-6) continue;
      cands.push_back({{box, best, score}, r * gw + c});
    }
  }

  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.det.score != b.det.score) return a.det.score > b.det.score;
    if (a.det.class_id != b.det.class_id) return a.det.class_id < b.det.class_id;
    return a.cell < b.cell;
  });

  std::vector<Detection> kept;
  std::vector<char> removed(cands.size(), 0);
  for (size_t i = 0; i < cands.size(); ++i) {
    if (removed[i]) continue;
    kept.push_back(cands[i].det);
    for (size_t j = i + 1; j < cands.size(); ++j) {
      if (removed[j] || cands[j].det.class_id != cands[i].det.class_id) continue;
      if (clamped_box_iou(cands[i].det.box, cands[j].det.box) > nms_iou) removed[j] = 1;
    }
  }
  return kept;
}

PosePrediction decode_pose(const Tensor& pose_raw, int class_id) {
  if (pose_raw.size() != 3) throw std::invalid_argument("decode_pose: expected 3 values");
  double s = pose_raw[0], c = pose_raw[1];
  const double n = std::sqrt(s * s + c * c);
  if (n > 1e-12) {
    s /= n;
    c /= n;
  } else {
    s = 0.0;
    c = 1.0;
  }
  PosePrediction out;
  out.angle = gen::fold_angle(std::atan2(s, c), class_id);
  out.depth = std::exp(pose_raw[2]);
  return out;
}

InferenceResult infer(const ModelParams& p, const Image& img) {
  ad::Graph g;
  // inference binding: parameters as plain constants, no gradient plumbing
  Binding b;
  b.vars.reserve(static_cast<size_t>(p.count()));
  for (int i = 0; i < p.count(); ++i) {
    ad::Var v = g.leaf(Tensor(), false);
    v->value = &p.tensor(i);
    b.vars.push_back(v);
  }
  ad::Var feat = backbone_forward(g, b, p, image_leaf(g, img));
  ad::Var det = detection_head_forward(g, b, p, feat);
  return {feat->val(), det->val()};
}

namespace {

void put_u32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>(v >> (8 * i)));
}
void put_u64(std::string& s, uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>(v >> (8 * i)));
}
uint32_t get_u32(const std::string& s, size_t& pos) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(s[pos++])) << (8 * i);
  return v;
}
uint64_t get_u64(const std::string& s, size_t& pos) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(s[pos++])) << (8 * i);
  return v;
}

constexpr char kCkptMagic[8] = {'W', 'S', 'D', 'A', 'C', 'K', 'P', '1'};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::string out(kCkptMagic, 8);
  put_u64(out, static_cast<uint64_t>(c.iteration));
  put_u32(out, static_cast<uint32_t>(c.entries.size()));
  for (const auto& [name, t] : c.entries) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<uint32_t>(t.ndim()));
    for (int d = 0; d < t.ndim(); ++d) put_u32(out, static_cast<uint32_t>(t.dim(d)));
    for (int i = 0; i < t.size(); ++i) {
      uint64_t bits;
      double v = t[i];
      std::memcpy(&bits, &v, 8);
      put_u64(out, bits);
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (s.size() < 20 || std::memcmp(s.data(), kCkptMagic, 8) != 0)
    throw std::runtime_error("bad checkpoint header: " + path);
  size_t pos = 8;
  Checkpoint c;
  c.iteration = static_cast<int64_t>(get_u64(s, pos));
  const uint32_t n = get_u32(s, pos);
  for (uint32_t e = 0; e < n; ++e) {
    const uint32_t name_len = get_u32(s, pos);
    std::string name = s.substr(pos, name_len);
    pos += name_len;
    const uint32_t ndim = get_u32(s, pos);
    std::vector<int> dims;
    for (uint32_t d = 0; d < ndim; ++d) dims.push_back(static_cast<int>(get_u32(s, pos)));
    Tensor t(dims);
    for (int i = 0; i < t.size(); ++i) {
      uint64_t bits = get_u64(s, pos);
      double v;
      std::memcpy(&v, &bits, 8);
      t[i] = v;
    }
    c.entries.emplace_back(std::move(name), std::move(t));
  }
  return c;
}

}  // namespace wsda::net
