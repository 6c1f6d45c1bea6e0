#include "wsda/runconfig.hpp"

#include <set>
#include <stdexcept>

#include <json.hpp>

#include "wsda/util.hpp"

namespace wsda::cli {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw std::invalid_argument("unknown key '" + it.key() + "' in " + where);
}

int line_of_offset(const std::string& text, size_t byte) {
  int line = 1;
  for (size_t i = 0; i < byte && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

}  // namespace

uint64_t RunConfig::digest() const {
  Digest d;
  d.update_string(run_config_to_json(*this));
  return d.value();
}

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["data"] = {{"benchmark", c.data.benchmark},
               {"class_skew", c.data.class_skew},
               {"train_images", c.data.train_images},
               {"val_images", c.data.val_images},
               {"seed", c.data.seed}};
  j["train"] = {{"iterations", c.train.iterations},
                {"batch_per_domain", c.train.batch_per_domain},
                {"lr", c.train.lr},
                {"momentum", c.train.momentum},
                {"weight_decay", c.train.weight_decay},
                {"lr_decay", c.train.lr_decay},
                {"decay_frac1", c.train.decay_frac1},
                {"decay_frac2", c.train.decay_frac2},
                {"grad_clip", c.train.grad_clip},
                {"roi_jitter", c.train.roi_jitter},
                {"eval_interval", c.train.eval_interval},
                {"checkpoint_interval", c.train.checkpoint_interval}};
  j["adapt"] = {{"lambda_adv", c.train.adapt.lambda_adv},
                {"lambda_grl", c.train.adapt.lambda_grl_max},
                {"grl_ramp_frac", c.train.adapt.grl_ramp_frac},
                {"gamma", c.train.adapt.gamma}};
  j["eval"] = {{"score_threshold", c.train.eval_cfg.score_threshold},
               {"nms_iou", c.train.eval_cfg.nms_iou},
               {"iou_threshold", c.train.eval_cfg.iou_threshold}};
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir;
  j["label_time"] = {{"target_sizes", c.label_time_sizes}, {"iterations", c.label_time_iterations}};
  return j.dump(2);
}

RunConfig parse_run_config(const std::string& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(strfmt("%s:%d: config parse error: %s", path.c_str(),
                                       line_of_offset(text, e.byte), e.what()));
  }

  RunConfig c;
  reject_unknown(j, {"data", "train", "adapt", "eval", "seeds", "output_dir", "label_time"}, path);
  if (j.contains("data")) {
    const json& d = j["data"];
    reject_unknown(d, {"benchmark", "class_skew", "train_images", "val_images", "seed"}, "data");
    c.data.benchmark = d.value("benchmark", c.data.benchmark);
    if (c.data.benchmark != "syn2real" && c.data.benchmark != "fog")
      throw std::invalid_argument("data.benchmark must be 'syn2real' or 'fog'");
    c.data.class_skew = d.value("class_skew", c.data.class_skew);
    c.data.train_images = d.value("train_images", c.data.train_images);
    c.data.val_images = d.value("val_images", c.data.val_images);
    c.data.seed = d.value("seed", c.data.seed);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    reject_unknown(t,
                   {"iterations", "batch_per_domain", "lr", "momentum", "weight_decay", "lr_decay",
                    "decay_frac1", "decay_frac2", "grad_clip", "roi_jitter", "eval_interval",
                    "checkpoint_interval"},
                   "train");
    c.train.iterations = t.value("iterations", c.train.iterations);
    c.train.batch_per_domain = t.value("batch_per_domain", c.train.batch_per_domain);
    c.train.lr = t.value("lr", c.train.lr);
    c.train.momentum = t.value("momentum", c.train.momentum);
    c.train.weight_decay = t.value("weight_decay", c.train.weight_decay);
    c.train.lr_decay = t.value("lr_decay", c.train.lr_decay);
    c.train.decay_frac1 = t.value("decay_frac1", c.train.decay_frac1);
    c.train.decay_frac2 = t.value("decay_frac2", c.train.decay_frac2);
    c.train.grad_clip = t.value("grad_clip", c.train.grad_clip);
    c.train.roi_jitter = t.value("roi_jitter", c.train.roi_jitter);
    c.train.eval_interval = t.value("eval_interval", c.train.eval_interval);
    c.train.checkpoint_interval = t.value("checkpoint_interval", c.train.checkpoint_interval);
  }
  if (j.contains("adapt")) {
    const json& a = j["adapt"];
    reject_unknown(a, {"lambda_adv", "lambda_grl", "grl_ramp_frac", "gamma"}, "adapt");
    c.train.adapt.lambda_adv = a.value("lambda_adv", c.train.adapt.lambda_adv);
    c.train.adapt.lambda_grl_max = a.value("lambda_grl", c.train.adapt.lambda_grl_max);
    c.train.adapt.grl_ramp_frac = a.value("grl_ramp_frac", c.train.adapt.grl_ramp_frac);
    c.train.adapt.gamma = a.value("gamma", c.train.adapt.gamma);
    if (c.train.adapt.lambda_adv < 0.0 || c.train.adapt.lambda_grl_max < 0.0 || c.train.adapt.gamma < 0.0)
      throw std::invalid_argument("adapt weights must be non-negative");
  }
  if (j.contains("eval")) {
    const json& e = j["eval"];
    reject_unknown(e, {"score_threshold", "nms_iou", "iou_threshold"}, "eval");
    c.train.eval_cfg.score_threshold = e.value("score_threshold", c.train.eval_cfg.score_threshold);
    c.train.eval_cfg.nms_iou = e.value("nms_iou", c.train.eval_cfg.nms_iou);
    c.train.eval_cfg.iou_threshold = e.value("iou_threshold", c.train.eval_cfg.iou_threshold);
  }
  if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<uint64_t>>();
  if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
  if (j.contains("label_time")) {
    const json& l = j["label_time"];
    reject_unknown(l, {"target_sizes", "iterations"}, "label_time");
    c.label_time_sizes = l.value("target_sizes", c.label_time_sizes);
    c.label_time_iterations = l.value("iterations", c.label_time_iterations);
  }
  return c;
}

namespace {

gen::DomainConfig base_source() {
  gen::DomainConfig c;
  c.palette = {{{0.85, 0.25, 0.20}, {0.20, 0.75, 0.30}, {0.25, 0.35, 0.85}}};
  c.background = {0.62, 0.62, 0.62};
  c.noise_sigma = 0.02;
  c.fog_alpha = 0.0;
  c.brightness_shift = 0.0;
  c.clutter = gen::ClutterLevel::none;
  c.class_frequencies = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  c.label_mode = gen::LabelMode::full;
  return c;
}

}  // namespace

gen::DomainConfig source_domain(const DataConfig& d) {
  (void)d;
  return base_source();
}

gen::DomainConfig target_domain(const DataConfig& d, gen::LabelMode mode) {
  gen::DomainConfig c = base_source();
  c.label_mode = mode;
  if (d.benchmark == "fog") {
    // identical layout and class distribution, fog only
    c.fog_alpha = 0.55;
    return c;
  }
  // syn2real-like: palette, illumination, noise and clutter all shift
  c.palette = {{{0.42, 0.38, 0.62}, {0.62, 0.55, 0.32}, {0.36, 0.52, 0.50}}};
  c.background = {0.45, 0.45, 0.45};
  c.noise_sigma = 0.08;
  c.brightness_shift = -0.05;
  c.clutter = gen::ClutterLevel::high;
  if (d.class_skew) c.class_frequencies = {0.5, 0.3, 0.2};
  return c;
}

}  // namespace wsda::cli
