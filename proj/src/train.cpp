#include "wsda/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "wsda/util.hpp"

namespace wsda::train {

using nlohmann::json;

std::string to_string(Preset p) {
  switch (p) {
    case Preset::source_only: return "source_only";
    case Preset::oracle: return "oracle";
    case Preset::uda_image: return "uda_image";
    case Preset::wsjt: return "wsjt";
    case Preset::wsjt_cafa: return "wsjt_cafa";
    case Preset::wsjt_cwfa: return "wsjt_cwfa";
  }
  return "wsjt";
}

Preset preset_from_string(const std::string& s) {
  if (s == "source_only") return Preset::source_only;
  if (s == "oracle") return Preset::oracle;
  if (s == "uda_image") return Preset::uda_image;
  if (s == "wsjt") return Preset::wsjt;
  if (s == "wsjt_cafa") return Preset::wsjt_cafa;
  if (s == "wsjt_cwfa") return Preset::wsjt_cwfa;
  throw std::invalid_argument("unknown preset: " + s);
}

PresetTraits preset_traits(Preset p) {
  switch (p) {
    case Preset::source_only: return {false, false, false, false, net::AlignMode::none};
    case Preset::oracle: return {true, true, true, false, net::AlignMode::none};
    case Preset::uda_image: return {true, false, false, true, net::AlignMode::image_level};
    case Preset::wsjt: return {true, true, false, false, net::AlignMode::none};
    case Preset::wsjt_cafa: return {true, true, false, false, net::AlignMode::class_agnostic};
    case Preset::wsjt_cwfa: return {true, true, false, false, net::AlignMode::class_wise};
  }
  return {};
}

TrainConfig TrainConfig::normalized() const {
  TrainConfig c = *this;
  c.adapt.mode = preset_traits(c.preset).align;
  return c;
}

Schedule lambda_schedule(int64_t iteration, const TrainConfig& config) {
  Schedule s;
  s.lr = config.lr;
  const double t = static_cast<double>(iteration);
  if (t >= config.decay_frac2 * config.iterations)
    s.lr *= config.lr_decay * config.lr_decay;
  else if (t >= config.decay_frac1 * config.iterations)
    s.lr *= config.lr_decay;
  const double ramp_end = config.adapt.grl_ramp_frac * config.iterations;
  s.lambda_grl = config.adapt.lambda_grl_max * (ramp_end <= 0.0 ? 1.0 : std::min(1.0, t / ramp_end));
  return s;
}

TrainState TrainState::create(const TrainConfig& config) {
  TrainState s;
  s.params = net::ModelParams::create(config.seed);
  s.momentum.reserve(static_cast<size_t>(s.params.count()));
  for (int i = 0; i < s.params.count(); ++i) s.momentum.emplace_back(s.params.tensor(i).dims());
  return s;
}

BatchIndices make_batch(const TrainConfig& config, int64_t iteration, int n_source, int n_target) {
  if (n_source <= 0) throw std::runtime_error("make_batch: empty source dataset");
  const PresetTraits traits = preset_traits(config.preset);
  BatchIndices out;
  RngStream root = RngStream(config.seed).fork("batch").fork(static_cast<uint64_t>(iteration));
  RngStream src = root.fork("source");
  for (int i = 0; i < config.batch_per_domain; ++i) out.source.push_back(src.uniform_int(n_source));
  if (traits.uses_target) {
    if (n_target <= 0) throw std::runtime_error("make_batch: empty target dataset");
    RngStream tgt = root.fork("target");
    for (int i = 0; i < config.batch_per_domain; ++i) out.target.push_back(tgt.uniform_int(n_target));
  }
  return out;
}

namespace {

gen::Box jitter_box(const gen::Box& b, double jitter, RngStream& s) {
  const double w = b[2] - b[0], h = b[3] - b[1];
  double cx = 0.5 * (b[0] + b[2]) + s.uniform(-jitter, jitter) * w;
  double cy = 0.5 * (b[1] + b[3]) + s.uniform(-jitter, jitter) * h;
  const double nw = w * s.uniform(1.0 - jitter, 1.0 + jitter);
  const double nh = h * s.uniform(1.0 - jitter, 1.0 + jitter);
  gen::Box out{cx - 0.5 * nw, cy - 0.5 * nh, cx + 0.5 * nw, cy + 0.5 * nh};
  out[0] = std::clamp(out[0], 0.0, static_cast<double>(gen::kImageW) - 2.0);
  out[1] = std::clamp(out[1], 0.0, static_cast<double>(gen::kImageH) - 2.0);
  out[2] = std::clamp(out[2], out[0] + 2.0, static_cast<double>(gen::kImageW));
  out[3] = std::clamp(out[3], out[1] + 2.0, static_cast<double>(gen::kImageH));
  return out;
}

StepImage load_source_image(const TrainConfig& config, const gen::DatasetReader& reader, int index,
                            RngStream jstream, bool align_objects) {
  StepImage im;
  im.dataset_index = index;
  im.is_target = false;
  im.det_supervised = true;
  im.img = reader.image(index);
  im.gt_boxes = reader.boxes(index);
  im.gt_classes = reader.classes(index);
  const auto& angles = reader.angles(index);
  const auto& depths = reader.depths(index);
  const std::vector<gen::MaskGrid> masks = reader.masks(index);
  im.has_attribute_labels = true;
  for (size_t k = 0; k < im.gt_boxes.size(); ++k) {
    RngStream os = jstream.fork(static_cast<uint64_t>(k));
    StepObject obj;
    obj.roi_box = jitter_box(im.gt_boxes[k], config.roi_jitter, os);
    obj.class_id = im.gt_classes[k];
    obj.has_attributes = true;
    obj.mask_crop = loss::crop_gt_mask(masks[k], obj.roi_box, net::kMaskSize);
    obj.angle = angles[k];
    obj.depth = depths[k];
    im.objects.push_back(std::move(obj));
  }
  (void)align_objects;  // source objects always carry ROI boxes
  return im;
}

StepImage load_target_image(const TrainConfig& config, const gen::DatasetReader& reader, int index,
                            RngStream jstream, const PresetTraits& traits) {
  StepImage im;
  im.dataset_index = index;
  im.is_target = true;
  im.img = reader.image(index);
  if (traits.target_images_only) return im;  // image-level alignment only

  im.det_supervised = true;
  im.gt_boxes = reader.boxes(index);
  im.gt_classes = reader.classes(index);

  const bool full = traits.target_attributes;
  if (full && !reader.has_attributes())
    throw std::runtime_error("preset requires full target labels but the dataset is weak-mode");
  std::vector<gen::MaskGrid> masks;
  if (full) masks = reader.masks(index);
  const bool need_rois = full || traits.align == net::AlignMode::class_wise ||
                         traits.align == net::AlignMode::class_agnostic;
  if (!need_rois) return im;

  im.has_attribute_labels = full;
  for (size_t k = 0; k < im.gt_boxes.size(); ++k) {
    RngStream os = jstream.fork(static_cast<uint64_t>(k));
    StepObject obj;
    obj.roi_box = jitter_box(im.gt_boxes[k], config.roi_jitter, os);
    obj.class_id = im.gt_classes[k];
    if (full) {
      obj.has_attributes = true;
      obj.mask_crop = loss::crop_gt_mask(masks[k], obj.roi_box, net::kMaskSize);
      obj.angle = reader.angles(index)[k];
      obj.depth = reader.depths(index)[k];
    }
    im.objects.push_back(std::move(obj));
  }
  return im;
}

}  // namespace

StepData assemble_step(const TrainConfig& config, const Readers& readers, const BatchIndices& batch,
                       int64_t iteration) {
  const PresetTraits traits = preset_traits(config.preset);
  StepData data;
  RngStream jroot = RngStream(config.seed).fork("jitter").fork(static_cast<uint64_t>(iteration));
  for (size_t slot = 0; slot < batch.source.size(); ++slot) {
    data.images.push_back(load_source_image(config, *readers.source, batch.source[slot],
                                            jroot.fork("source").fork(slot),
                                            traits.align != net::AlignMode::none));
  }
  data.n_source = static_cast<int>(batch.source.size());
  for (size_t slot = 0; slot < batch.target.size(); ++slot) {
    data.images.push_back(load_target_image(config, *readers.target, batch.target[slot],
                                            jroot.fork("target").fork(slot), traits));
  }
  data.n_target = static_cast<int>(batch.target.size());

  if (traits.align == net::AlignMode::image_level) {
    data.n_source_align = data.n_source;
    data.n_target_align = data.n_target;
  } else if (traits.align != net::AlignMode::none) {
    for (const StepImage& im : data.images) {
      const int k = static_cast<int>(im.objects.size());
      (im.is_target ? data.n_target_align : data.n_source_align) += k;
    }
  }
  return data;
}

namespace {

struct ImageOutput {
  double det = 0.0, att = 0.0, adv_sum = 0.0;
  std::vector<Tensor> grads;  // aligned with params; empty tensor = untouched
};

// Builds the per-image share of the composed objective and runs backward.
// Summing these shares over the batch (in index order) reproduces the full
// composition exactly up to floating-point association.
ImageOutput run_image(const net::ModelParams& params, const StepImage& im, const TrainConfig& config,
                      double lambda_grl, double det_w, double att_w, double dom_w) {
  const net::AlignMode mode = config.adapt.mode;
  const bool build_domain = mode != net::AlignMode::none && config.adapt.lambda_adv != 0.0 && dom_w > 0.0;

  ad::Graph g;
  net::Binding b = net::bind_params(g, params);
  ad::Var feat = net::backbone_forward(g, b, params, net::image_leaf(g, im.img));

  std::vector<ad::Var> contrib;
  ImageOutput out;

  if (im.det_supervised) {
    loss::DetectionTargets targets = loss::make_detection_targets(im.gt_boxes, im.gt_classes);
    ad::Var det = loss::detection_loss(g, net::detection_head_forward(g, b, params, feat), targets);
    out.det = det->val()[0];
    contrib.push_back(g.scale(det, det_w));
  }

  std::vector<ad::Var> att_terms;
  std::vector<ad::Var> focal_terms;
  for (const StepObject& obj : im.objects) {
    ad::Var roi = net::roi_extract(g, feat, obj.roi_box);
    if (obj.has_attributes) {
      ad::Var lm = loss::mask_loss(g, net::mask_head_logits(g, b, params, roi), obj.mask_crop);
      ad::Var lp = loss::pose_loss(g, net::pose_head_forward(g, b, params, roi, obj.class_id), obj.angle,
                                   obj.depth, obj.class_id);
      att_terms.push_back(g.add(lm, lp));
    }
    if (build_domain && mode != net::AlignMode::image_level) {
      ad::Var p = net::domain_classifier_forward(g, b, params, roi, obj.class_id, mode, lambda_grl);
      focal_terms.push_back(g.focal_from_prob(p, config.adapt.gamma, im.is_target));
    }
  }
  if (build_domain && mode == net::AlignMode::image_level) {
    ad::Var p = net::image_domain_prob(g, b, params, feat, lambda_grl);
    focal_terms.push_back(g.focal_from_prob(p, config.adapt.gamma, im.is_target));
  }

  if (!att_terms.empty()) {
    ad::Var att = g.scale(g.add_n(att_terms), 1.0 / static_cast<double>(att_terms.size()));
    out.att = att->val()[0];
    contrib.push_back(g.scale(att, att_w));
  }
  for (ad::Var f : focal_terms) {
    out.adv_sum += f->val()[0];
    contrib.push_back(g.scale(f, dom_w));
  }

  if (!contrib.empty()) {
    g.backward(g.add_n(contrib));
    out.grads.resize(static_cast<size_t>(params.count()));
    for (int i = 0; i < params.count(); ++i)
      if (!b[i]->grad.empty()) out.grads[static_cast<size_t>(i)] = std::move(b[i]->grad);
  }
  return out;
}

}  // namespace

loss::LossBreakdown train_step(TrainState& state, const StepData& data, const TrainConfig& config) {
  const PresetTraits traits = preset_traits(config.preset);
  if (!traits.target_attributes)
    for (const StepImage& im : data.images)
      if (im.is_target && im.has_attribute_labels)
        throw std::runtime_error("train_step: target batch carries attribute labels under weak supervision");

  const Schedule sched = lambda_schedule(state.iteration, config);
  const double inv_src = data.n_source > 0 ? 1.0 / data.n_source : 0.0;
  const double inv_tgt = data.n_target > 0 ? 1.0 / data.n_target : 0.0;

  const int n = static_cast<int>(data.images.size());
  std::vector<ImageOutput> outs(static_cast<size_t>(n));
  parallel_for(n, [&](int i) {
    const StepImage& im = data.images[static_cast<size_t>(i)];
    const double det_w = im.is_target ? inv_tgt : inv_src;
    const double n_align = im.is_target ? data.n_target_align : data.n_source_align;
    const double dom_w = n_align > 0 ? config.adapt.lambda_adv / n_align : 0.0;
    outs[static_cast<size_t>(i)] = run_image(state.params, im, config, sched.lambda_grl, det_w, det_w, dom_w);
  });

  loss::LossBreakdown bd;
  for (int i = 0; i < n; ++i) {
    const StepImage& im = data.images[static_cast<size_t>(i)];
    const ImageOutput& o = outs[static_cast<size_t>(i)];
    if (im.is_target) {
      bd.det_tgt += o.det * inv_tgt;
      bd.att_tgt += o.att * inv_tgt;
      if (data.n_target_align > 0) bd.adv += o.adv_sum / data.n_target_align;
    } else {
      bd.det_src += o.det * inv_src;
      bd.att_src += o.att * inv_src;
      if (data.n_source_align > 0) bd.adv += o.adv_sum / data.n_source_align;
    }
  }

  if (!std::isfinite(bd.total(config.adapt.lambda_adv))) {
    std::ostringstream msg;
    msg << "train_step: non-finite loss at iteration " << state.iteration << "; batch indices src=[";
    for (const StepImage& im : data.images)
      if (!im.is_target) msg << im.dataset_index << ",";
    msg << "] tgt=[";
    for (const StepImage& im : data.images)
      if (im.is_target) msg << im.dataset_index << ",";
    msg << "]";
    throw std::runtime_error(msg.str());
  }

  // reduce per-image gradients in batch order, then decay / clip / update
  const int np = state.params.count();
  std::vector<Tensor> grads(static_cast<size_t>(np));
  for (int i = 0; i < n; ++i) {
    const ImageOutput& o = outs[static_cast<size_t>(i)];
    if (o.grads.empty()) continue;
    for (int pidx = 0; pidx < np; ++pidx) {
      const Tensor& gsrc = o.grads[static_cast<size_t>(pidx)];
      if (gsrc.empty()) continue;
      Tensor& gdst = grads[static_cast<size_t>(pidx)];
      if (gdst.empty()) gdst = Tensor(gsrc.dims());
      for (int k = 0; k < gsrc.size(); ++k) gdst[k] += gsrc[k];
    }
  }

  double sq_norm = 0.0;
  for (int pidx = 0; pidx < np; ++pidx) {
    Tensor& grd = grads[static_cast<size_t>(pidx)];
    if (grd.empty()) continue;
    const Tensor& w = state.params.tensor(pidx);
    for (int k = 0; k < grd.size(); ++k) {
      grd[k] += config.weight_decay * w[k];
      sq_norm += grd[k] * grd[k];
    }
  }
  const double norm = std::sqrt(sq_norm);
  const double clip_scale = (config.grad_clip > 0.0 && norm > config.grad_clip) ? config.grad_clip / norm : 1.0;

  for (int pidx = 0; pidx < np; ++pidx) {
    Tensor& grd = grads[static_cast<size_t>(pidx)];
    if (grd.empty()) continue;  // untouched parameters do not move
    Tensor& vel = state.momentum[static_cast<size_t>(pidx)];
    Tensor& w = state.params.tensor(pidx);
    for (int k = 0; k < grd.size(); ++k) {
      vel[k] = config.momentum * vel[k] + clip_scale * grd[k];
      w[k] -= sched.lr * vel[k];
    }
  }

  ++state.iteration;
  state.window_sum.det_src += bd.det_src;
  state.window_sum.att_src += bd.att_src;
  state.window_sum.det_tgt += bd.det_tgt;
  state.window_sum.att_tgt += bd.att_tgt;
  state.window_sum.adv += bd.adv;
  state.window_total += bd.total(config.adapt.lambda_adv);
  state.window_count += 1;
  return bd;
}

std::string HistoryRecord::to_json() const {
  json j;
  j["iteration"] = iteration;
  j["det_src"] = losses.det_src;
  j["att_src"] = losses.att_src;
  j["det_tgt"] = losses.det_tgt;
  j["att_tgt"] = losses.att_tgt;
  j["adv"] = losses.adv;
  j["joint"] = losses.joint();
  j["total"] = total;
  j["box_map"] = metrics.box_map;
  j["mask_map"] = metrics.mask_map;
  j["pose_ds"] = metrics.pose_ds;
  return j.dump();
}

void save_train_checkpoint(const std::string& path, const TrainState& state) {
  net::Checkpoint c;
  c.iteration = state.iteration;
  for (int i = 0; i < state.params.count(); ++i)
    c.entries.emplace_back(state.params.def(i).name, state.params.tensor(i));
  for (int i = 0; i < state.params.count(); ++i)
    c.entries.emplace_back("momentum/" + state.params.def(i).name, state.momentum[static_cast<size_t>(i)]);
  Tensor window({7});
  window[0] = state.window_sum.det_src;
  window[1] = state.window_sum.att_src;
  window[2] = state.window_sum.det_tgt;
  window[3] = state.window_sum.att_tgt;
  window[4] = state.window_sum.adv;
  window[5] = state.window_total;
  window[6] = static_cast<double>(state.window_count);
  c.entries.emplace_back("stats/window", std::move(window));
  net::save_checkpoint(path, c);
}

TrainState load_train_checkpoint(const std::string& path, const TrainConfig& config) {
  net::Checkpoint c = net::load_checkpoint(path);
  TrainState s = TrainState::create(config);
  s.iteration = c.iteration;
  auto find = [&](const std::string& name) -> const Tensor& {
    for (const auto& [n, t] : c.entries)
      if (n == name) return t;
    throw std::runtime_error("checkpoint misses entry " + name + ": " + path);
  };
  for (int i = 0; i < s.params.count(); ++i) {
    const std::string& name = s.params.def(i).name;
    const Tensor& t = find(name);
    if (!t.same_shape(s.params.tensor(i))) throw std::runtime_error("checkpoint shape mismatch: " + name);
    s.params.tensor(i) = t;
    s.momentum[static_cast<size_t>(i)] = find("momentum/" + name);
  }
  const Tensor& window = find("stats/window");
  s.window_sum.det_src = window[0];
  s.window_sum.att_src = window[1];
  s.window_sum.det_tgt = window[2];
  s.window_sum.att_tgt = window[3];
  s.window_sum.adv = window[4];
  s.window_total = window[5];
  s.window_count = static_cast<int>(window[6]);
  return s;
}

RunResult run_training(const TrainConfig& raw_config, const RunPaths& paths,
                       const std::optional<std::string>& resume_from) {
  const TrainConfig config = raw_config.normalized();
  const PresetTraits traits = preset_traits(config.preset);

  gen::DatasetReader source(paths.source_train);
  std::optional<gen::DatasetReader> target;
  if (traits.uses_target) {
    if (paths.target_train.empty()) throw std::runtime_error("preset requires a target train dataset");
    target.emplace(paths.target_train);
    if (traits.target_attributes && !target->has_attributes())
      throw std::runtime_error("oracle preset refuses a weak-mode target dataset: " + paths.target_train);
  }
  gen::DatasetReader val(paths.val);

  ensure_dir(paths.out_dir);
  TrainState state = resume_from ? load_train_checkpoint(*resume_from, config) : TrainState::create(config);

  std::ofstream history(paths.out_dir + "/history.jsonl", std::ios::trunc);
  if (!history) throw std::runtime_error("cannot write history in " + paths.out_dir);

  RunResult result;
  Readers readers{&source, target ? &*target : nullptr};

  auto snapshot = [&](const loss::LossBreakdown& mean_losses, double mean_total) {
    HistoryRecord rec;
    rec.iteration = state.iteration;
    rec.losses = mean_losses;
    rec.total = mean_total;
    rec.metrics = eval::evaluate(state.params, val, eval::EvalMode::predicted, config.eval_cfg);
    history << rec.to_json() << "\n";
    history.flush();
    result.history.push_back(std::move(rec));
  };

  if (config.iterations == 0 || (resume_from && state.iteration >= config.iterations)) {
    snapshot({}, 0.0);
  }

  while (state.iteration < config.iterations) {
    BatchIndices batch = make_batch(config, state.iteration, source.size(), target ? target->size() : 0);
    StepData data = assemble_step(config, readers, batch, state.iteration);
    train_step(state, data, config);

    const bool at_end = state.iteration == config.iterations;
    if ((config.eval_interval > 0 && state.iteration % config.eval_interval == 0) || at_end) {
      loss::LossBreakdown mean = state.window_sum;
      const int cnt = std::max(1, state.window_count);
      mean.det_src /= cnt;
      mean.att_src /= cnt;
      mean.det_tgt /= cnt;
      mean.att_tgt /= cnt;
      mean.adv /= cnt;
      snapshot(mean, state.window_total / cnt);
      state.window_sum = {};
      state.window_total = 0.0;
      state.window_count = 0;
    }
    if ((config.checkpoint_interval > 0 && state.iteration % config.checkpoint_interval == 0) || at_end) {
      save_train_checkpoint(paths.out_dir + strfmt("/ckpt_%08lld.bin", static_cast<long long>(state.iteration)),
                            state);
    }
  }
  save_train_checkpoint(paths.out_dir + "/ckpt_final.bin", state);

  result.final_predicted = eval::evaluate(state.params, val, eval::EvalMode::predicted, config.eval_cfg);
  result.final_gt_boxes = eval::evaluate(state.params, val, eval::EvalMode::gt_boxes, config.eval_cfg);
  return result;
}

}  // namespace wsda::train
