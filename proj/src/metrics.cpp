#include "wsda/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace wsda::eval {

using nlohmann::json;

double box_iou(const Box& a, const Box& b) { return gen::box_iou_raw(a, b); }

double mask_iou(const MaskGrid& a, const MaskGrid& b, bool* degenerate) {
  if (a.h != b.h || a.w != b.w) throw std::invalid_argument("mask_iou: shape mismatch");
  int inter = 0, uni = 0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    inter += a.v[i] & b.v[i];
    uni += a.v[i] | b.v[i];
  }
  if (degenerate) *degenerate = uni == 0;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

void MatchResult::merge(const MatchResult& other) {
  predictions.insert(predictions.end(), other.predictions.begin(), other.predictions.end());
  if (gt_per_class.size() < other.gt_per_class.size()) gt_per_class.resize(other.gt_per_class.size(), 0);
  for (size_t c = 0; c < other.gt_per_class.size(); ++c) gt_per_class[c] += other.gt_per_class[c];
}

MatchResult match_predictions(const std::vector<Prediction>& preds, const std::vector<GroundTruth>& gts,
                              const std::function<double(const Prediction&, const GroundTruth&)>& iou_fn,
                              int num_classes, double iou_threshold) {
  MatchResult out;
  out.gt_per_class.assign(static_cast<size_t>(num_classes), 0);
  for (const GroundTruth& gt : gts) ++out.gt_per_class[static_cast<size_t>(gt.class_id)];

  std::vector<char> taken(gts.size(), 0);
  for (const Prediction& p : preds) {
    int best = -1;
    double best_iou = 0.0;
    for (size_t k = 0; k < gts.size(); ++k) {
      if (taken[k] || gts[k].class_id != p.class_id) continue;
      const double iou = iou_fn(p, gts[k]);
      if (iou >= iou_threshold && iou > best_iou) {  // ties keep the lower index
        best_iou = iou;
        best = static_cast<int>(k);
      }
    }
    PredLabel label{p.score, p.class_id, best >= 0};
    if (best >= 0) taken[static_cast<size_t>(best)] = 1;
    out.predictions.push_back(label);
  }
  return out;
}

ApResult average_precision(const MatchResult& matches) {
  const int num_classes = static_cast<int>(matches.gt_per_class.size());
  ApResult out;
  out.per_class.assign(static_cast<size_t>(num_classes), -1.0);

  double sum = 0.0;
  int counted = 0;
  for (int c = 0; c < num_classes; ++c) {
    const int n_gt = matches.gt_per_class[static_cast<size_t>(c)];
    if (n_gt == 0) continue;
    std::vector<PredLabel> cls;
    for (const PredLabel& p : matches.predictions)
      if (p.class_id == c) cls.push_back(p);
    std::stable_sort(cls.begin(), cls.end(),
                     [](const PredLabel& a, const PredLabel& b) { return a.score > b.score; });
    // precision/recall points after each prediction
    std::vector<double> prec, rec;
    int tp = 0, fp = 0;
    for (const PredLabel& p : cls) {
      p.is_true_positive ? ++tp : ++fp;
      prec.push_back(static_cast<double>(tp) / (tp + fp));
      rec.push_back(static_cast<double>(tp) / n_gt);
    }
    // area under the precision envelope (all-point interpolation)
    double ap = 0.0;
    double prev_rec = 0.0;
    for (size_t i = 0; i < prec.size(); ++i) {
      if (rec[i] <= prev_rec) continue;
      double env = 0.0;
      for (size_t j = i; j < prec.size(); ++j) env = std::max(env, prec[j]);
      ap += (rec[i] - prev_rec) * env;
      prev_rec = rec[i];
    }
    out.per_class[static_cast<size_t>(c)] = ap;
    sum += ap;
    ++counted;
  }
  out.mean = counted > 0 ? sum / counted : 0.0;
  return out;
}

double folded_angle_error(double a, double b, int class_id) {
  const double span = gen::canonical_angle_span(class_id);
  double d = std::fmod(std::abs(a - b), span);
  return std::min(d, span - d);
}

MatchResult match_pose_predictions(const std::vector<Prediction>& preds,
                                   const std::vector<GroundTruth>& gts, int num_classes,
                                   double iou_threshold, double max_angle_err_deg,
                                   double max_rel_depth_err) {
  MatchResult out;
  out.gt_per_class.assign(static_cast<size_t>(num_classes), 0);
  for (const GroundTruth& gt : gts) ++out.gt_per_class[static_cast<size_t>(gt.class_id)];

  const double max_angle = max_angle_err_deg * M_PI / 180.0;
  std::vector<char> taken(gts.size(), 0);
  for (const Prediction& p : preds) {
    int best = -1;
    double best_iou = 0.0;
    for (size_t k = 0; k < gts.size(); ++k) {
      if (taken[k] || gts[k].class_id != p.class_id) continue;
      const double iou = box_iou(p.box, gts[k].box);
      if (iou >= iou_threshold && iou > best_iou) {
        best_iou = iou;
        best = static_cast<int>(k);
      }
    }
    bool tp = false;
    if (best >= 0) {
      taken[static_cast<size_t>(best)] = 1;  // the ground truth is consumed either way
      const GroundTruth& gt = gts[static_cast<size_t>(best)];
      const double angle_err = folded_angle_error(p.angle, gt.angle, p.class_id);
      const double depth_err = std::abs(p.depth - gt.depth) / gt.depth;
      tp = angle_err <= max_angle && depth_err <= max_rel_depth_err;
    }
    out.predictions.push_back({p.score, p.class_id, tp});
  }
  return out;
}

double pose_detection_score(const std::vector<Prediction>& preds, const std::vector<GroundTruth>& gts,
                            int num_classes) {
  return average_precision(match_pose_predictions(preds, gts, num_classes)).mean;
}

std::string MetricReport::to_json() const {
  json j;
  j["box_ap"] = box_ap;
  j["box_map"] = box_map;
  j["mask_ap"] = mask_ap;
  j["mask_map"] = mask_map;
  j["pose_ds"] = pose_ds;
  j["gt_boxes_mode"] = gt_boxes_mode;
  j["n_images"] = n_images;
  return j.dump(2);
}

MetricReport MetricReport::from_json(const std::string& s) {
  json j = json::parse(s);
  MetricReport r;
  r.box_ap = j.at("box_ap").get<std::vector<double>>();
  r.box_map = j.at("box_map").get<double>();
  r.mask_ap = j.at("mask_ap").get<std::vector<double>>();
  r.mask_map = j.at("mask_map").get<double>();
  r.pose_ds = j.at("pose_ds").get<double>();
  r.gt_boxes_mode = j.at("gt_boxes_mode").get<bool>();
  r.n_images = j.at("n_images").get<int>();
  return r;
}

}  // namespace wsda::eval
