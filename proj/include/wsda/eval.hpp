#pragma once

#include "wsda/dataset.hpp"
#include "wsda/metrics.hpp"
#include "wsda/net.hpp"

namespace wsda::eval {

enum class EvalMode { predicted, gt_boxes };
std::string to_string(EvalMode m);
EvalMode eval_mode_from_string(const std::string& s);

struct EvalConfig {
  double score_threshold = 0.05;
  double nms_iou = 0.5;
  double iou_threshold = 0.5;
  double mask_binarize = 0.5;
};

// Runs the cascaded model over a fully-labeled validation dataset.
// predicted mode decodes detections and feeds them to the attribute heads;
// gt_boxes mode feeds ground-truth boxes and classes instead, decoupling
// attribute quality from detection quality.
MetricReport evaluate(const net::ModelParams& params, const gen::DatasetReader& dataset, EvalMode mode,
                      const EvalConfig& config = {});

// Paste an MxM mask probability grid into the box footprint on an HxW
// canvas (nearest cell, threshold at `binarize`).
gen::MaskGrid paste_mask(const Tensor& probs, const gen::Box& box, int h, int w, double binarize);

}  // namespace wsda::eval
