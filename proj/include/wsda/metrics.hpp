#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "wsda/scenegen.hpp"

namespace wsda::eval {

using gen::Box;
using gen::MaskGrid;

double box_iou(const Box& a, const Box& b);
// |a AND b| / |a OR b|; both-empty pairs are defined as 0 and flagged.
double mask_iou(const MaskGrid& a, const MaskGrid& b, bool* degenerate = nullptr);

struct PredLabel {
  double score = 0.0;
  int class_id = 0;
  bool is_true_positive = false;
};

struct MatchResult {
  std::vector<PredLabel> predictions;          // in input (score-sorted) order
  std::vector<int> gt_per_class;               // ground-truth count per class

  void merge(const MatchResult& other);
};

struct GroundTruth {
  Box box;
  int class_id = 0;
  MaskGrid mask;         // optional, for mask matching
  double angle = 0.0;    // optional, for pose scoring
  double depth = 1.0;
};

struct Prediction {
  Box box;
  int class_id = 0;
  double score = 0.0;
  MaskGrid mask;
  double angle = 0.0;
  double depth = 1.0;
};

// Greedy matching in descending score order: each prediction takes the
// highest-IoU unmatched same-class ground truth with IoU >= threshold, ties
// broken by lower ground-truth index. Predictions must be score-sorted.
MatchResult match_predictions(const std::vector<Prediction>& preds, const std::vector<GroundTruth>& gts,
                              const std::function<double(const Prediction&, const GroundTruth&)>& iou_fn,
                              int num_classes, double iou_threshold = 0.5);

// All-point interpolated AP per class (area under the precision envelope);
// classes without ground truth are excluded from the mean.
struct ApResult {
  std::vector<double> per_class;  // -1 for classes with no ground truth
  double mean = 0.0;
};
ApResult average_precision(const MatchResult& matches);

// A matched prediction is a pose true positive iff box IoU >= 0.5, folded
// angle error <= 15 degrees and |d_hat - d| / d <= 0.25; the score is the
// mean AP over those labels.
MatchResult match_pose_predictions(const std::vector<Prediction>& preds,
                                   const std::vector<GroundTruth>& gts, int num_classes,
                                   double iou_threshold = 0.5, double max_angle_err_deg = 15.0,
                                   double max_rel_depth_err = 0.25);
double pose_detection_score(const std::vector<Prediction>& preds, const std::vector<GroundTruth>& gts,
                            int num_classes);

double folded_angle_error(double a, double b, int class_id);

struct MetricReport {
  std::vector<double> box_ap;   // per class, -1 if no ground truth
  double box_map = 0.0;
  std::vector<double> mask_ap;
  double mask_map = 0.0;
  double pose_ds = 0.0;
  bool gt_boxes_mode = false;
  int n_images = 0;

  std::string to_json() const;
  static MetricReport from_json(const std::string& s);
};

}  // namespace wsda::eval
