#pragma once

#include <optional>
#include <string>
#include <vector>

#include "wsda/dataset.hpp"
#include "wsda/eval.hpp"
#include "wsda/losses.hpp"
#include "wsda/net.hpp"

namespace wsda::train {

enum class Preset { source_only, oracle, uda_image, wsjt, wsjt_cafa, wsjt_cwfa };
std::string to_string(Preset p);
Preset preset_from_string(const std::string& s);

// What a preset is allowed to touch. The mapping is part of the contract and
// is enforced by the batch assembly (and provable from reader access stats).
struct PresetTraits {
  bool uses_target = false;
  bool target_boxes = false;        // weak labels (boxes + classes) are read
  bool target_attributes = false;   // masks/poses are read (full supervision)
  bool target_images_only = false;  // images alone, no annotation records
  net::AlignMode align = net::AlignMode::none;
};
PresetTraits preset_traits(Preset p);

struct TrainConfig {
  Preset preset = Preset::wsjt;
  int iterations = 20000;
  int batch_per_domain = 8;
  double lr = 0.005;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double lr_decay = 0.1;
  double decay_frac1 = 0.6;
  double decay_frac2 = 0.75;
  double grad_clip = 10.0;
  double roi_jitter = 0.1;  // +-10% shift/scale on ground-truth ROI boxes
  uint64_t seed = 0;
  int eval_interval = 2000;
  int checkpoint_interval = 10000;
  loss::AdaptConfig adapt;  // adapt.mode is overridden by the preset
  eval::EvalConfig eval_cfg;

  // preset-consistent copy (alignment mode forced by the preset table)
  TrainConfig normalized() const;
};

struct Schedule {
  double lr = 0.0;
  double lambda_grl = 0.0;
};
Schedule lambda_schedule(int64_t iteration, const TrainConfig& config);

struct TrainState {
  net::ModelParams params;
  std::vector<Tensor> momentum;  // aligned with params
  int64_t iteration = 0;
  // running sums since the last history record
  loss::LossBreakdown window_sum;
  double window_total = 0.0;
  int window_count = 0;

  static TrainState create(const TrainConfig& config);
};

struct BatchIndices {
  std::vector<int> source;
  std::vector<int> target;  // empty when the preset draws no target batch
};
BatchIndices make_batch(const TrainConfig& config, int64_t iteration, int n_source, int n_target);

// One object participating in attribute supervision and/or feature alignment.
struct StepObject {
  gen::Box roi_box;  // jittered ground-truth box
  int class_id = 0;
  bool has_attributes = false;
  Tensor mask_crop;  // (M, M, 1) target, when has_attributes
  double angle = 0.0;
  double depth = 1.0;
};

struct StepImage {
  gen::Image img;
  bool is_target = false;
  bool det_supervised = false;
  bool has_attribute_labels = false;
  std::vector<gen::Box> gt_boxes;
  std::vector<int> gt_classes;
  std::vector<StepObject> objects;
  int dataset_index = 0;
};

struct StepData {
  std::vector<StepImage> images;  // sources first, then targets
  int n_source = 0, n_target = 0;
  int n_source_align = 0, n_target_align = 0;  // alignment sample counts
};

struct Readers {
  const gen::DatasetReader* source = nullptr;
  const gen::DatasetReader* target = nullptr;
};

StepData assemble_step(const TrainConfig& config, const Readers& readers, const BatchIndices& batch,
                       int64_t iteration);

// One SGD-with-momentum step on the composed objective; deterministic given
// (state, data). Throws on non-finite loss, naming the offending batch.
loss::LossBreakdown train_step(TrainState& state, const StepData& data, const TrainConfig& config);

struct HistoryRecord {
  int64_t iteration = 0;
  loss::LossBreakdown losses;  // mean over the window since the last record
  double total = 0.0;
  eval::MetricReport metrics;  // predicted mode

  std::string to_json() const;
};

struct RunResult {
  eval::MetricReport final_predicted;
  eval::MetricReport final_gt_boxes;
  std::vector<HistoryRecord> history;
};

struct RunPaths {
  std::string source_train;
  std::string target_train;  // empty for source_only
  std::string val;           // full-mode target val split
  std::string out_dir;       // history + checkpoints
};

// Full training loop with periodic evaluation snapshots and checkpoints.
// With resume_from set, picks up bit-exactly from the stored state.
RunResult run_training(const TrainConfig& config, const RunPaths& paths,
                       const std::optional<std::string>& resume_from = std::nullopt);

void save_train_checkpoint(const std::string& path, const TrainState& state);
TrainState load_train_checkpoint(const std::string& path, const TrainConfig& config);

}  // namespace wsda::train
