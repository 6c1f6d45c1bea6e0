#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "wsda/autodiff.hpp"
#include "wsda/scenegen.hpp"

namespace wsda::net {

using gen::Box;
using gen::Image;

constexpr int kFeatStride = 4;
constexpr int kFeatChannels = 32;
constexpr int kGridH = gen::kImageH / kFeatStride;
constexpr int kGridW = gen::kImageW / kFeatStride;
constexpr int kRoiSize = 8;
constexpr int kMaskSize = 16;
constexpr double kBoxRefSize = 16.0;  // pixels; log-w/log-h reference
constexpr int kDetChannels = 1 + gen::kNumClasses + 4;

enum class ParamGroup { detector, attributes, domain };  // theta / omega / delta

enum class AlignMode { none, class_agnostic, class_wise, image_level };
std::string to_string(AlignMode m);
AlignMode align_mode_from_string(const std::string& s);

struct ParamDef {
  std::string name;
  ParamGroup group;
  Tensor tensor;
};

// The three disjoint parameter sets. Construction order is fixed and defines
// the checkpoint layout and optimizer traversal order.
class ModelParams {
 public:
  static ModelParams create(uint64_t seed);

  int count() const { return static_cast<int>(params_.size()); }
  const ParamDef& def(int i) const { return params_[static_cast<size_t>(i)]; }
  Tensor& tensor(int i) { return params_[static_cast<size_t>(i)].tensor; }
  const Tensor& tensor(int i) const { return params_[static_cast<size_t>(i)].tensor; }
  int index_of(const std::string& name) const;  // throws if absent

 private:
  std::vector<ParamDef> params_;
};

// Parameter leaves of one graph, aligned with ModelParams order.
struct Binding {
  std::vector<ad::Var> vars;
  ad::Var operator[](int i) const { return vars[static_cast<size_t>(i)]; }
};
Binding bind_params(ad::Graph& g, const ModelParams& p);

// Resolved parameter indices (stable across instances).
struct ParamIds {
  int conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b, conv4_w, conv4_b;
  int det_w, det_b;
  int mask1_w, mask1_b, mask2_w, mask2_b;
  int pose1_w, pose1_b, pose2_w, pose2_b;
  int dom_cw1_w, dom_cw1_b, dom_cw2_w, dom_cw2_b;
  int dom_ca1_w, dom_ca1_b, dom_ca2_w, dom_ca2_b;
  int dom_img1_w, dom_img1_b, dom_img2_w, dom_img2_b;
  static const ParamIds& get(const ModelParams& p);
};

ad::Var image_leaf(ad::Graph& g, const Image& img);

// image (64x64x3, values in [0,1]) -> feature map (16x16x32).
ad::Var backbone_forward(ad::Graph& g, const Binding& b, const ModelParams& p, ad::Var image);
// feature map -> per-cell detection output (16x16x8):
// [objectness logit, L class logits, dx, dy, log-w, log-h]
ad::Var detection_head_forward(ad::Graph& g, const Binding& b, const ModelParams& p, ad::Var feat);
ad::Var roi_extract(ad::Graph& g, ad::Var feat, const Box& box);
// mask logits (16x16x1); probabilities are sigmoid(logits)
ad::Var mask_head_logits(ad::Graph& g, const Binding& b, const ModelParams& p, ad::Var roi);
ad::Var mask_head_forward(ad::Graph& g, const Binding& b, const ModelParams& p, ad::Var roi);
// (sin, cos, log-depth), raw head output; decode normalizes (sin, cos)
ad::Var pose_head_forward(ad::Graph& g, const Binding& b, const ModelParams& p, ad::Var roi, int class_id);
// Per-class (or single, in class_agnostic mode) target-domain logits on a
// gradient-reversed ROI feature.
ad::Var domain_logits(ad::Graph& g, const Binding& b, const ModelParams& p, ad::Var roi_reversed,
                      AlignMode mode);
// Selected target-domain probability for one instance; applies the
// gradient reversal internally.
ad::Var domain_classifier_forward(ad::Graph& g, const Binding& b, const ModelParams& p, ad::Var roi,
                                  int class_id, AlignMode mode, double lambda_grl);
// Image-level variant: global-average-pooled feature map -> 2-layer
// classifier behind a gradient reversal.
ad::Var image_domain_prob(ad::Graph& g, const Binding& b, const ModelParams& p, ad::Var feat,
                          double lambda_grl);

// --- box encoding and decoding (plain, no autodiff) ---

// Deltas are (dx, dy) of the box center in cell units relative to the cell
// center, and (log w, log h) relative to kBoxRefSize.
std::array<double, 4> encode_box(const Box& box, int cell_row, int cell_col);
Box decode_box(const std::array<double, 4>& delta, int cell_row, int cell_col);
// Grid cell containing the box center.
std::pair<int, int> center_cell(const Box& box);

struct Detection {
  Box box;
  int class_id = 0;
  double score = 0.0;
};

struct PosePrediction {
  double angle = 0.0;
  double depth = 1.0;
};

// score = sigmoid(objectness) * max-class softmax probability; boxes decoded
// and clipped to the image; greedy per-class NMS; sorted by descending score.
std::vector<Detection> decode_detections(const Tensor& det_out, double score_threshold, double nms_iou);

// (sin, cos) normalized to unit norm, angle folded into the class's
// canonical range, depth = exp(log-depth).
PosePrediction decode_pose(const Tensor& pose_raw, int class_id);

// Forward pass without gradients; returns copies of the feature map and the
// detection output.
struct InferenceResult {
  Tensor feat;
  Tensor det;
};
InferenceResult infer(const ModelParams& p, const Image& img);

// --- checkpoints ---
// Binary little-endian container: magic, version, iteration, then named
// 64-bit shape-tagged arrays (parameters, optimizer state, extras).
struct Checkpoint {
  int64_t iteration = 0;
  std::vector<std::pair<std::string, Tensor>> entries;
};

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace wsda::net
