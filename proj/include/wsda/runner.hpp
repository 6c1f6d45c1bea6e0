#pragma once

#include <optional>
#include <string>
#include <vector>

#include "wsda/runconfig.hpp"

namespace wsda::cli {

struct RunSummary {
  std::string preset;
  uint64_t seed = 0;
  int iterations = 0;
  int n_target_images = 0;  // target train images available to the run
  eval::MetricReport predicted;
  eval::MetricReport gt_boxes;
  std::string run_dir;
  uint64_t config_digest = 0;
};

// Drives dataset generation and training runs under a work directory, with
// caching: a run whose final.json carries the current config digest is
// reused instead of re-trained.
class Runner {
 public:
  Runner(RunConfig config, std::string work_dir);

  const RunConfig& config() const { return config_; }
  const std::string& data_dir() const { return data_dir_; }
  const std::string& runs_dir() const { return runs_dir_; }

  // Writes source/target train and val splits (target train in weak mode
  // plus a full-mode twin for the oracle preset).
  void generate_datasets();
  // Prefix subsets of the target train split for the label-time curve.
  void generate_target_subset(int n_images);

  RunSummary ensure_run(train::Preset preset, uint64_t seed, bool quiet = false);
  // Reduced-iteration single-seed runs over target subsets (label-time curve).
  RunSummary ensure_label_time_run(train::Preset preset, int n_target_images, bool quiet = false);

  // Total annotation cost of the first n_images of the target train split:
  // sum over images of n_objects, times 1 (weak) or 6 (full).
  double label_time_units(int n_images, bool full_labels) const;

  std::vector<RunSummary> load_all_runs() const;

  std::string dataset_dir(const std::string& name) const { return data_dir_ + "/" + name; }

 private:
  RunSummary execute_run(const train::TrainConfig& tc, const std::string& run_dir,
                         const std::string& target_train_dir, int n_target_images, bool quiet) const;

  RunConfig config_;
  std::string work_dir_, data_dir_, runs_dir_;
};

RunSummary load_run_summary(const std::string& run_dir);

}  // namespace wsda::cli
