#include "wsda/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include <json.hpp>

#include "wsda/util.hpp"

namespace wsda::cli {

using nlohmann::json;

namespace {

uint64_t domain_seed(const DataConfig& d, const char* tag) {
  return RngStream(d.seed).fork(tag).next_u64();
}

json report_to_json(const eval::MetricReport& r) { return json::parse(r.to_json()); }

}  // namespace

Runner::Runner(RunConfig config, std::string work_dir)
    : config_(std::move(config)), work_dir_(std::move(work_dir)) {
  data_dir_ = work_dir_ + "/datasets";
  runs_dir_ = work_dir_ + "/" + config_.output_dir;
  ensure_dir(data_dir_);
  ensure_dir(runs_dir_);
}

void Runner::generate_datasets() {
  const DataConfig& d = config_.data;
  gen::DatasetManifest m;
  m.generator_seed = domain_seed(d, "source");
  m.domain = gen::DomainTag::source;

  m.split = gen::Split::train;
  m.label_mode = gen::LabelMode::full;
  m.n_images = d.train_images;
  gen::write_dataset(m, source_domain(d), dataset_dir("source_train"));
  m.split = gen::Split::val;
  m.n_images = d.val_images;
  gen::write_dataset(m, source_domain(d), dataset_dir("source_val"));

  m.generator_seed = domain_seed(d, "target");
  m.domain = gen::DomainTag::target;
  m.split = gen::Split::train;
  m.n_images = d.train_images;
  m.label_mode = gen::LabelMode::weak;
  gen::write_dataset(m, target_domain(d, gen::LabelMode::weak), dataset_dir("target_train"));
  // full-mode twin of the same scenes; read only by the oracle preset
  m.label_mode = gen::LabelMode::full;
  gen::write_dataset(m, target_domain(d, gen::LabelMode::full), dataset_dir("target_train_full"));
  m.split = gen::Split::val;
  m.n_images = d.val_images;
  gen::write_dataset(m, target_domain(d, gen::LabelMode::full), dataset_dir("target_val"));
}

void Runner::generate_target_subset(int n_images) {
  const DataConfig& d = config_.data;
  gen::DatasetManifest m;
  m.generator_seed = domain_seed(d, "target");
  m.domain = gen::DomainTag::target;
  m.split = gen::Split::train;
  m.n_images = n_images;
  m.label_mode = gen::LabelMode::weak;
  gen::write_dataset(m, target_domain(d, gen::LabelMode::weak),
                     dataset_dir(strfmt("target_train_n%06d", n_images)));
  m.label_mode = gen::LabelMode::full;
  gen::write_dataset(m, target_domain(d, gen::LabelMode::full),
                     dataset_dir(strfmt("target_train_full_n%06d", n_images)));
}

double Runner::label_time_units(int n_images, bool full_labels) const {
  gen::DatasetReader reader(dataset_dir("target_train"));
  if (n_images > reader.size()) throw std::runtime_error("label_time_units: subset larger than dataset");
  double objects = 0.0;
  for (int i = 0; i < n_images; ++i) objects += static_cast<double>(reader.boxes(i).size());
  return objects * (full_labels ? 6.0 : 1.0);
}

RunSummary Runner::execute_run(const train::TrainConfig& tc, const std::string& run_dir,
                               const std::string& target_train_dir, int n_target_images,
                               bool quiet) const {
  // reuse a finished run when its digest matches
  const std::string final_path = run_dir + "/final.json";
  Digest want;
  want.update_u64(config_.digest());
  want.update_string(to_string(tc.preset));
  want.update_u64(tc.seed);
  want.update_u64(static_cast<uint64_t>(tc.iterations));
  want.update_u64(static_cast<uint64_t>(n_target_images));
  if (file_exists(final_path)) {
    RunSummary cached = load_run_summary(run_dir);
    if (cached.config_digest == want.value()) return cached;
  }

  train::RunPaths paths;
  paths.source_train = data_dir_ + "/source_train";
  paths.target_train = target_train_dir;
  paths.val = data_dir_ + "/target_val";
  paths.out_dir = run_dir;
  ensure_dir(run_dir);

  const auto t0 = std::chrono::steady_clock::now();
  train::RunResult res = train::run_training(tc, paths);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!quiet)
    std::fprintf(stderr, "[run] %s seed=%llu iters=%d done in %.1fs (mask mAP %.3f, pose-DS %.3f)\n",
                 to_string(tc.preset).c_str(), static_cast<unsigned long long>(tc.seed), tc.iterations,
                 secs, res.final_predicted.mask_map, res.final_predicted.pose_ds);

  RunSummary s;
  s.preset = to_string(tc.preset);
  s.seed = tc.seed;
  s.iterations = tc.iterations;
  s.n_target_images = n_target_images;
  s.predicted = res.final_predicted;
  s.gt_boxes = res.final_gt_boxes;
  s.run_dir = run_dir;
  s.config_digest = want.value();

  json j;
  j["preset"] = s.preset;
  j["seed"] = s.seed;
  j["iterations"] = s.iterations;
  j["n_target_images"] = s.n_target_images;
  j["config_digest"] = hex_u64(s.config_digest);
  j["history"] = run_dir + "/history.jsonl";
  j["predicted"] = report_to_json(s.predicted);
  j["gt_boxes"] = report_to_json(s.gt_boxes);
  write_file(final_path, j.dump(2) + "\n");
  return s;
}

RunSummary Runner::ensure_run(train::Preset preset, uint64_t seed, bool quiet) {
  train::TrainConfig tc = config_.train;
  tc.preset = preset;
  tc.seed = seed;
  const train::PresetTraits traits = train::preset_traits(preset);
  std::string target_dir;
  if (traits.uses_target)
    target_dir = dataset_dir(traits.target_attributes ? "target_train_full" : "target_train");
  const std::string run_dir = runs_dir_ + "/" + to_string(preset) + strfmt("_seed%llu",
                                                                           static_cast<unsigned long long>(seed));
  return execute_run(tc, run_dir, target_dir, config_.data.train_images, quiet);
}

RunSummary Runner::ensure_label_time_run(train::Preset preset, int n_target_images, bool quiet) {
  generate_target_subset(n_target_images);
  train::TrainConfig tc = config_.train;
  tc.preset = preset;
  tc.seed = config_.seeds.empty() ? 0 : config_.seeds.front();
  tc.iterations = config_.label_time_iterations;
  const train::PresetTraits traits = train::preset_traits(preset);
  if (!traits.uses_target) throw std::invalid_argument("label-time runs need a target-using preset");
  const std::string target_dir = dataset_dir(
      strfmt(traits.target_attributes ? "target_train_full_n%06d" : "target_train_n%06d", n_target_images));
  const std::string run_dir =
      runs_dir_ + "/" + to_string(preset) + strfmt("_lt_n%06d", n_target_images);
  return execute_run(tc, run_dir, target_dir, n_target_images, quiet);
}

std::vector<RunSummary> Runner::load_all_runs() const {
  std::vector<RunSummary> out;
  namespace fs = std::filesystem;
  if (!fs::exists(runs_dir_)) return out;
  std::vector<std::string> dirs;
  for (const auto& e : fs::directory_iterator(runs_dir_))
    if (e.is_directory() && fs::exists(e.path() / "final.json")) dirs.push_back(e.path().string());
  std::sort(dirs.begin(), dirs.end());
  for (const std::string& d : dirs) out.push_back(load_run_summary(d));
  return out;
}

RunSummary load_run_summary(const std::string& run_dir) {
  json j = json::parse(read_file(run_dir + "/final.json"));
  RunSummary s;
  s.preset = j.at("preset").get<std::string>();
  s.seed = j.at("seed").get<uint64_t>();
  s.iterations = j.at("iterations").get<int>();
  s.n_target_images = j.at("n_target_images").get<int>();
  s.config_digest = std::stoull(j.at("config_digest").get<std::string>(), nullptr, 16);
  s.predicted = eval::MetricReport::from_json(j.at("predicted").dump());
  s.gt_boxes = eval::MetricReport::from_json(j.at("gt_boxes").dump());
  s.run_dir = run_dir;
  return s;
}

}  // namespace wsda::cli
