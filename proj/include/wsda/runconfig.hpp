#pragma once

#include <string>
#include <vector>

#include "wsda/dataset.hpp"
#include "wsda/train.hpp"

namespace wsda::cli {

struct DataConfig {
  std::string benchmark = "syn2real";  // "syn2real" or "fog"
  bool class_skew = true;
  int train_images = 2000;
  int val_images = 500;
  uint64_t seed = 7;
};

struct RunConfig {
  DataConfig data;
  train::TrainConfig train;  // preset/seed are assigned per run
  std::vector<uint64_t> seeds{0, 1, 2};
  std::string output_dir = "runs";
  std::vector<int> label_time_sizes{120, 400, 1200, 2000};
  int label_time_iterations = 6000;

  // Digest over every setting that influences run outputs.
  uint64_t digest() const;
};

// Parses a JSON run config; parse errors are reported with file/line
// diagnostics, unknown keys are rejected.
RunConfig parse_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& c);

// Benchmark domain presets. The source is always fully labeled; the target's
// label mode is the caller's choice (weak train split, full val/oracle).
gen::DomainConfig source_domain(const DataConfig& d);
gen::DomainConfig target_domain(const DataConfig& d, gen::LabelMode mode);

}  // namespace wsda::cli
