// Command-line front end: generate / train / eval / report.
// Exit codes: 0 success, 1 config error, 2 runtime failure, 3 missing inputs.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "wsda/dataset.hpp"
#include "wsda/eval.hpp"
#include "wsda/report.hpp"
#include "wsda/runner.hpp"
#include "wsda/util.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;
constexpr int kMissingInputs = 3;

wsda::net::ModelParams params_from_checkpoint(const std::string& path) {
  wsda::net::Checkpoint c = wsda::net::load_checkpoint(path);
  wsda::net::ModelParams p = wsda::net::ModelParams::create(0);
  for (int i = 0; i < p.count(); ++i) {
    bool found = false;
    for (const auto& [name, t] : c.entries) {
      if (name == p.def(i).name) {
        p.tensor(i) = t;
        found = true;
        break;
      }
    }
    if (!found) throw std::runtime_error("checkpoint misses parameter " + p.def(i).name);
  }
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weakly-supervised domain adaptation benchmark for cascaded detection"};
  app.require_subcommand(1);

  std::string config_path, work_dir = "work";
  std::string preset_name = "wsjt", mode_name = "predicted";
  std::string checkpoint_path, dataset_path, out_path, resume_path;
  uint64_t seed = 0;
  bool with_label_time = false;

  CLI::App* gen = app.add_subcommand("generate", "generate benchmark datasets");
  gen->add_option("--config", config_path, "run config (JSON)")->required();
  gen->add_option("--work-dir", work_dir, "work directory (datasets + runs)");

  CLI::App* train_cmd = app.add_subcommand("train", "train one preset/seed");
  train_cmd->add_option("--config", config_path, "run config (JSON)")->required();
  train_cmd->add_option("--work-dir", work_dir, "work directory (datasets + runs)");
  train_cmd->add_option("--preset", preset_name, "training preset")->required();
  train_cmd->add_option("--seed", seed, "run seed");

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval_cmd->add_option("--dataset", dataset_path, "dataset directory (full-mode val split)")->required();
  eval_cmd->add_option("--mode", mode_name, "predicted | gt_boxes");
  eval_cmd->add_option("--out", out_path, "output MetricReport JSON path");

  CLI::App* report_cmd = app.add_subcommand("report", "aggregate completed runs into tables and plots");
  report_cmd->add_option("--config", config_path, "run config (JSON)")->required();
  report_cmd->add_option("--work-dir", work_dir, "work directory (datasets + runs)");
  report_cmd->add_option("--out", out_path, "report output directory (default <work>/report)");
  report_cmd->add_flag("--label-time", with_label_time, "include/refresh the label-time runs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (gen->parsed()) {
      wsda::cli::RunConfig cfg = wsda::cli::parse_run_config(config_path);
      wsda::cli::Runner runner(cfg, work_dir);
      runner.generate_datasets();
      std::printf("datasets ready under %s\n", runner.data_dir().c_str());
      return kOk;
    }
    if (train_cmd->parsed()) {
      wsda::cli::RunConfig cfg = wsda::cli::parse_run_config(config_path);
      wsda::train::Preset preset = wsda::train::preset_from_string(preset_name);
      wsda::cli::Runner runner(cfg, work_dir);
      if (!wsda::file_exists(runner.data_dir() + "/source_train/manifest.json")) {
        std::fprintf(stderr, "datasets missing under %s (run `wsda generate` first)\n",
                     runner.data_dir().c_str());
        return kMissingInputs;
      }
      wsda::cli::RunSummary s = runner.ensure_run(preset, seed);
      std::printf("run %s: mask mAP %.3f, pose-DS %.3f (outputs in %s)\n", s.preset.c_str(),
                  s.predicted.mask_map, s.predicted.pose_ds, s.run_dir.c_str());
      return kOk;
    }
    if (eval_cmd->parsed()) {
      if (!wsda::file_exists(checkpoint_path) || !wsda::file_exists(dataset_path + "/manifest.json")) {
        std::fprintf(stderr, "checkpoint or dataset missing\n");
        return kMissingInputs;
      }
      wsda::eval::EvalMode mode;
      try {
        mode = wsda::eval::eval_mode_from_string(mode_name);
      } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kConfigError;
      }
      wsda::net::ModelParams params = params_from_checkpoint(checkpoint_path);
      wsda::gen::DatasetReader reader(dataset_path);
      wsda::eval::MetricReport r = wsda::eval::evaluate(params, reader, mode);
      const std::string text = r.to_json() + "\n";
      if (out_path.empty()) {
        std::fputs(text.c_str(), stdout);
      } else {
        wsda::write_file(out_path, text);
      }
      return kOk;
    }
    if (report_cmd->parsed()) {
      wsda::cli::RunConfig cfg = wsda::cli::parse_run_config(config_path);
      wsda::cli::Runner runner(cfg, work_dir);
      std::vector<wsda::cli::RunSummary> runs = runner.load_all_runs();
      if (runs.empty()) {
        std::fprintf(stderr, "no completed runs under %s\n", runner.runs_dir().c_str());
        return kMissingInputs;
      }
      wsda::cli::ReportResult rep = wsda::cli::build_report(runs, &runner);
      const std::string dir = out_path.empty() ? work_dir + "/report" : out_path;
      wsda::cli::write_report_files(rep, dir);
      std::printf("%s\n%s\n%s\n", rep.mask_table.c_str(), rep.pose_table.c_str(), rep.gt_table.c_str());
      for (const std::string& m : rep.missing) std::fprintf(stderr, "missing runs for preset %s\n", m.c_str());
      std::printf("report written to %s\n", dir.c_str());
      return kOk;
    }
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeError;
  }
  return kOk;
}
