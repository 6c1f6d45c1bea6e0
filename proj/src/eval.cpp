#include "wsda/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "wsda/util.hpp"

namespace wsda::eval {

std::string to_string(EvalMode m) { return m == EvalMode::predicted ? "predicted" : "gt_boxes"; }

EvalMode eval_mode_from_string(const std::string& s) {
  if (s == "predicted") return EvalMode::predicted;
  if (s == "gt_boxes") return EvalMode::gt_boxes;
  throw std::invalid_argument("unknown eval mode: " + s);
}

gen::MaskGrid paste_mask(const Tensor& probs, const gen::Box& box, int h, int w, double binarize) {
  gen::MaskGrid out(h, w);
  const int m = probs.dim(0);
  const double x0 = box[0], y0 = box[1];
  const double bw = box[2] - box[0], bh = box[3] - box[1];
  if (bw <= 0.0 || bh <= 0.0) return out;
  const int py0 = std::max(0, static_cast<int>(std::floor(y0)));
  const int py1 = std::min(h - 1, static_cast<int>(std::ceil(box[3])) - 1);
  const int px0 = std::max(0, static_cast<int>(std::floor(x0)));
  const int px1 = std::min(w - 1, static_cast<int>(std::ceil(box[2])) - 1);
  for (int y = py0; y <= py1; ++y) {
    const double cy = y + 0.5;
    if (cy < y0 || cy >= box[3]) continue;
    const int a = std::clamp(static_cast<int>((cy - y0) / bh * m), 0, m - 1);
    for (int x = px0; x <= px1; ++x) {
      const double cx = x + 0.5;
      if (cx < x0 || cx >= box[2]) continue;
      const int b = std::clamp(static_cast<int>((cx - x0) / bw * m), 0, m - 1);
      if (probs.at(a, b, 0) >= binarize) out.at(y, x) = 1;
    }
  }
  return out;
}

namespace {

struct ImageData {
  gen::Image img;
  std::vector<GroundTruth> gts;
};

struct PerImage {
  MatchResult box_match;
  MatchResult mask_match;
  MatchResult pose_match;
};

PerImage evaluate_image(const net::ModelParams& params, const ImageData& data, EvalMode mode,
                        const EvalConfig& config) {
  net::InferenceResult inf = net::infer(params, data.img);

  std::vector<net::Detection> dets;
  if (mode == EvalMode::predicted) {
    dets = net::decode_detections(inf.det, config.score_threshold, config.nms_iou);
  } else {
    for (const GroundTruth& gt : data.gts) dets.push_back({gt.box, gt.class_id, 1.0});
  }

  // attribute heads on a shared forward graph over the frozen feature map
  std::vector<Prediction> preds;
  preds.reserve(dets.size());
  ad::Graph g;
  ad::Var feat = g.leaf(Tensor());
  feat->value = &inf.feat;
  net::Binding b;
  b.vars.reserve(static_cast<size_t>(params.count()));
  for (int i = 0; i < params.count(); ++i) {
    ad::Var v = g.leaf(Tensor());
    v->value = &params.tensor(i);
    b.vars.push_back(v);
  }
  for (const net::Detection& det : dets) {
    Prediction p;
    p.box = det.box;
    p.class_id = det.class_id;
    p.score = det.score;
    ad::Var roi = net::roi_extract(g, feat, det.box);
    ad::Var mask_probs = net::mask_head_forward(g, b, params, roi);
    p.mask = paste_mask(mask_probs->val(), det.box, data.img.h, data.img.w, config.mask_binarize);
    ad::Var pose = net::pose_head_forward(g, b, params, roi, det.class_id);
    net::PosePrediction pp = net::decode_pose(pose->val(), det.class_id);
    p.angle = pp.angle;
    p.depth = pp.depth;
    preds.push_back(std::move(p));
  }

  PerImage out;
  out.box_match = match_predictions(
      preds, data.gts, [](const Prediction& p, const GroundTruth& t) { return box_iou(p.box, t.box); },
      gen::kNumClasses, config.iou_threshold);
  out.mask_match = match_predictions(
      preds, data.gts, [](const Prediction& p, const GroundTruth& t) { return mask_iou(p.mask, t.mask); },
      gen::kNumClasses, config.iou_threshold);
  out.pose_match = match_pose_predictions(preds, data.gts, gen::kNumClasses, config.iou_threshold);
  return out;
}

}  // namespace

MetricReport evaluate(const net::ModelParams& params, const gen::DatasetReader& dataset, EvalMode mode,
                      const EvalConfig& config) {
  if (!dataset.has_attributes())
    throw std::runtime_error("evaluate: dataset lacks attribute labels (full-mode val split required)");

  const int n = dataset.size();
  // the reader caches and counts accesses, so all loads stay on this thread
  std::vector<ImageData> data(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    ImageData& d = data[static_cast<size_t>(i)];
    d.img = dataset.image(i);
    const auto& boxes = dataset.boxes(i);
    const auto& classes = dataset.classes(i);
    const auto& angles = dataset.angles(i);
    const auto& depths = dataset.depths(i);
    std::vector<gen::MaskGrid> masks = dataset.masks(i);
    d.gts.resize(boxes.size());
    for (size_t k = 0; k < boxes.size(); ++k) {
      d.gts[k].box = boxes[k];
      d.gts[k].class_id = classes[k];
      d.gts[k].mask = std::move(masks[k]);
      d.gts[k].angle = angles[k];
      d.gts[k].depth = depths[k];
    }
  }

  std::vector<PerImage> per(static_cast<size_t>(n));
  parallel_for(n, [&](int i) {
    per[static_cast<size_t>(i)] = evaluate_image(params, data[static_cast<size_t>(i)], mode, config);
  });

  MatchResult box_all, mask_all, pose_all;
  for (const PerImage& pi : per) {
    box_all.merge(pi.box_match);
    mask_all.merge(pi.mask_match);
    pose_all.merge(pi.pose_match);
  }

  ApResult box_ap = average_precision(box_all);
  ApResult mask_ap = average_precision(mask_all);
  ApResult pose_ap = average_precision(pose_all);

  MetricReport r;
  r.box_ap = box_ap.per_class;
  r.box_map = box_ap.mean;
  r.mask_ap = mask_ap.per_class;
  r.mask_map = mask_ap.mean;
  r.pose_ds = pose_ap.mean;
  r.gt_boxes_mode = mode == EvalMode::gt_boxes;
  r.n_images = n;
  return r;
}

}  // namespace wsda::eval
