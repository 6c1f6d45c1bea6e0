#pragma once

#include <optional>
#include <vector>

#include "wsda/net.hpp"

namespace wsda::loss {

using gen::Box;
using gen::MaskGrid;
using net::AlignMode;

struct AdaptConfig {
  double lambda_adv = 1.0;
  double lambda_grl_max = 0.1;
  double grl_ramp_frac = 0.2;  // linear 0 -> lambda_grl_max over this fraction of iterations
  double gamma = 2.0;
  AlignMode mode = AlignMode::none;
};

struct LossBreakdown {
  double det_src = 0.0;
  double att_src = 0.0;
  double det_tgt = 0.0;
  double att_tgt = 0.0;  // nonzero only under full target supervision (oracle)
  double adv = 0.0;      // domain-classification loss, as minimized by delta

  double joint() const { return det_src + att_src + det_tgt + att_tgt; }
  double total(double lambda_adv) const { return joint() + lambda_adv * adv; }
};

// Cell assignment for the grid detection loss: the cell containing each
// ground-truth box center is positive; when two objects share a cell the
// larger one keeps it and the other is dropped from assignment.
struct DetectionTargets {
  Tensor objectness;                 // (gridH, gridW, 1) of {0,1}
  std::vector<ad::CellTarget> positives;
};
DetectionTargets make_detection_targets(const std::vector<Box>& boxes, const std::vector<int>& classes);

// objectness BCE over all cells + class CE and smooth-L1 box terms over
// positive cells, unit weights.
ad::Var detection_loss(ad::Graph& g, ad::Var det_out, const DetectionTargets& targets);

// Ground-truth mask cropped to the ROI box and resampled to MxM nearest
// neighbor, then mean binary cross-entropy against the mask logits.
Tensor crop_gt_mask(const MaskGrid& mask, const Box& roi_box, int out_size);
ad::Var mask_loss(ad::Graph& g, ad::Var mask_logits, const Tensor& gt_crop);

// angle term 1 - cos(predicted - gt) on the normalized (sin, cos) embedding
// (doubled angle for the 2-fold symmetric class) plus |log d - log d_gt|.
ad::Var pose_loss(ad::Graph& g, ad::Var pose_raw, double gt_angle, double gt_depth, int class_id);

// Focal domain-classification term for one instance probability.
// Target samples: -(1-p)^gamma log p; source samples: -p^gamma log(1-p).
double focal_domain_loss(double p, bool is_target, double gamma);

// Per-batch graph terms collected by the caller.
struct BatchTerms {
  std::vector<ad::Var> det;           // one per image
  std::vector<ad::Var> att;           // one per image with supervised objects
  std::vector<ad::Var> domain_probs;  // one per aligned sample (object or image)
  int images = 0;
  bool has_attribute_labels = false;
};

struct ComposedLoss {
  LossBreakdown breakdown;
  ad::Var backward_scalar = nullptr;
  ad::Var adv_term = nullptr;  // nullptr when alignment is off
};

// The joint objective plus lambda_adv times the domain-classification loss;
// the gradient reversal inside the domain path turns minimization of the
// scalar into the adversarial min-max. Attribute terms on the target side
// are rejected unless allow_target_attributes (full target supervision).
ComposedLoss compose_losses(ad::Graph& g, const BatchTerms& source, const BatchTerms* target,
                            const AdaptConfig& config, bool allow_target_attributes = false);

}  // namespace wsda::loss
