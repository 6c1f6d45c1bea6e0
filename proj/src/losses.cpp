#include "wsda/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace wsda::loss {

DetectionTargets make_detection_targets(const std::vector<Box>& boxes, const std::vector<int>& classes) {
  if (boxes.size() != classes.size())
    throw std::invalid_argument("make_detection_targets: box/class count mismatch");
  DetectionTargets t;
  t.objectness = Tensor({net::kGridH, net::kGridW, 1});

  std::vector<int> cell_owner(static_cast<size_t>(net::kGridH) * net::kGridW, -1);
  auto area = [&](size_t i) {
    return (boxes[i][2] - boxes[i][0]) * (boxes[i][3] - boxes[i][1]);
  };
  for (size_t i = 0; i < boxes.size(); ++i) {
    auto [row, col] = net::center_cell(boxes[i]);
    const size_t cell = static_cast<size_t>(row) * net::kGridW + col;
    if (cell_owner[cell] < 0 || area(i) > area(static_cast<size_t>(cell_owner[cell])))
      cell_owner[cell] = static_cast<int>(i);  // ties by larger area; loser dropped
  }
  for (size_t cell = 0; cell < cell_owner.size(); ++cell) {
    const int owner = cell_owner[cell];
    if (owner < 0) continue;
    t.objectness[static_cast<int>(cell)] = 1.0;
    const int row = static_cast<int>(cell) / net::kGridW;
    const int col = static_cast<int>(cell) % net::kGridW;
    ad::CellTarget ct;
    ct.cell = static_cast<int>(cell);
    ct.cls = classes[static_cast<size_t>(owner)];
    ct.delta = net::encode_box(boxes[static_cast<size_t>(owner)], row, col);
    t.positives.push_back(ct);
  }
  return t;
}

ad::Var detection_loss(ad::Graph& g, ad::Var det_out, const DetectionTargets& targets) {
  ad::Var obj = g.channel_slice(det_out, 0, 1);
  ad::Var cls = g.channel_slice(det_out, 1, 1 + gen::kNumClasses);
  ad::Var box = g.channel_slice(det_out, 1 + gen::kNumClasses, net::kDetChannels);
  ad::Var l_obj = g.bce_logits_mean(obj, targets.objectness);
  ad::Var l_cls = g.cells_softmax_ce_mean(cls, targets.positives);
  ad::Var l_box = g.cells_smooth_l1_mean(box, targets.positives);
  return g.add_n({l_obj, l_cls, l_box});
}

Tensor crop_gt_mask(const MaskGrid& mask, const Box& roi_box, int out_size) {
  Tensor out({out_size, out_size, 1});
  const double x0 = roi_box[0], y0 = roi_box[1];
  const double bw = roi_box[2] - roi_box[0], bh = roi_box[3] - roi_box[1];
  if (bw <= 0.0 || bh <= 0.0) throw std::invalid_argument("crop_gt_mask: degenerate box");
  for (int a = 0; a < out_size; ++a) {
    const double py = y0 + (a + 0.5) * bh / out_size;
    const int iy = std::clamp(static_cast<int>(std::floor(py)), 0, mask.h - 1);
    for (int b = 0; b < out_size; ++b) {
      const double px = x0 + (b + 0.5) * bw / out_size;
      const int ix = std::clamp(static_cast<int>(std::floor(px)), 0, mask.w - 1);
      out.at(a, b, 0) = mask.at(iy, ix) ? 1.0 : 0.0;
    }
  }
  return out;
}

ad::Var mask_loss(ad::Graph& g, ad::Var mask_logits, const Tensor& gt_crop) {
  return g.bce_logits_mean(mask_logits, gt_crop);
}

ad::Var pose_loss(ad::Graph& g, ad::Var pose_raw, double gt_angle, double gt_depth, int class_id) {
  if (gt_depth <= 0.0) throw std::invalid_argument("pose_loss: depth must be positive");
  ad::Var s = g.index(pose_raw, 0);
  ad::Var c = g.index(pose_raw, 1);
  ad::Var d = g.index(pose_raw, 2);
  ad::Var norm = g.sqrt(g.affine(g.add(g.mul(s, s), g.mul(c, c)), 1.0, 1e-12));
  ad::Var sh = g.div(s, norm);
  ad::Var ch = g.div(c, norm);

  ad::Var cos_err;  // cos(predicted - gt) in the class's symmetry group
  if (class_id == gen::kClassEllipse) {
    // fold the 2-fold symmetry by comparing doubled angles
    ad::Var s2 = g.scale(g.mul(sh, ch), 2.0);
    ad::Var c2 = g.sub(g.mul(ch, ch), g.mul(sh, sh));
    cos_err = g.add(g.scale(s2, std::sin(2.0 * gt_angle)), g.scale(c2, std::cos(2.0 * gt_angle)));
  } else {
    cos_err = g.add(g.scale(sh, std::sin(gt_angle)), g.scale(ch, std::cos(gt_angle)));
  }
  ad::Var angle_term = g.affine(cos_err, -1.0, 1.0);
  ad::Var depth_term = g.abs_sub_const(d, std::log(gt_depth));
  return g.add(angle_term, depth_term);
}

double focal_domain_loss(double p, bool is_target, double gamma) {
  constexpr double kEps = 1e-7;
  const double pc = std::clamp(p, kEps, 1.0 - kEps);
  if (is_target) return -std::pow(1.0 - pc, gamma) * std::log(pc);
  return -std::pow(pc, gamma) * std::log(1.0 - pc);
}

namespace {

ad::Var mean_of(ad::Graph& g, const std::vector<ad::Var>& xs, int denom) {
  if (xs.empty() || denom == 0) return g.constant_scalar(0.0);
  return g.scale(g.add_n(xs), 1.0 / denom);
}

}  // namespace

ComposedLoss compose_losses(ad::Graph& g, const BatchTerms& source, const BatchTerms* target,
                            const AdaptConfig& config, bool allow_target_attributes) {
  if (target && target->has_attribute_labels && !allow_target_attributes)
    throw std::runtime_error(
        "compose_losses: target batch carries attribute labels in a weak-supervision setting");

  ComposedLoss out;
  ad::Var det_src = mean_of(g, source.det, source.images);
  ad::Var att_src = mean_of(g, source.att, source.images);
  ad::Var det_tgt = target ? mean_of(g, target->det, target->images) : g.constant_scalar(0.0);
  ad::Var att_tgt = target && allow_target_attributes ? mean_of(g, target->att, target->images)
                                                      : g.constant_scalar(0.0);
  ad::Var scalar = g.add_n({det_src, att_src, det_tgt, att_tgt});

  out.breakdown.det_src = det_src->val()[0];
  out.breakdown.att_src = att_src->val()[0];
  out.breakdown.det_tgt = det_tgt->val()[0];
  out.breakdown.att_tgt = att_tgt->val()[0];

  if (config.mode != AlignMode::none) {
    std::vector<ad::Var> src_terms, tgt_terms;
    for (ad::Var p : source.domain_probs)
      src_terms.push_back(g.focal_from_prob(p, config.gamma, /*is_target=*/false));
    if (target)
      for (ad::Var p : target->domain_probs)
        tgt_terms.push_back(g.focal_from_prob(p, config.gamma, /*is_target=*/true));
    ad::Var adv = g.add(mean_of(g, src_terms, static_cast<int>(src_terms.size())),
                        mean_of(g, tgt_terms, static_cast<int>(tgt_terms.size())));
    out.adv_term = adv;
    out.breakdown.adv = adv->val()[0];
    if (config.lambda_adv != 0.0) scalar = g.add(scalar, g.scale(adv, config.lambda_adv));
  }

  out.backward_scalar = scalar;
  return out;
}

}  // namespace wsda::loss
