#pragma once

#include <optional>
#include <string>
#include <vector>

#include "wsda/runner.hpp"

namespace wsda::cli {

struct CurvePoint {
  double time_units = 0.0;
  double value = 0.0;  // mask mAP
  std::string run_id;
};

struct LabelTimeCurves {
  std::vector<CurvePoint> weak;  // wsjt_cwfa on weak target labels
  std::vector<CurvePoint> full;  // oracle on full target labels
};

struct ReportResult {
  std::string mask_table;      // per-preset mask mAP (best seed)
  std::string pose_table;      // per-preset pose-DS (best seed)
  std::string gt_table;        // gt-boxes ablation
  std::optional<LabelTimeCurves> curves;
  std::vector<std::string> missing;  // presets without completed runs
  std::string json;            // machine-readable report with run references
};

// Aggregates completed runs ("best seed at last iteration") into the three
// tables and the label-time curve; missing presets are listed and the rest
// is still emitted.
ReportResult build_report(const std::vector<RunSummary>& runs, const Runner* runner_for_costs);

// Writes tables, report.json and the label-time curve (CSV + SVG) to out_dir.
void write_report_files(const ReportResult& r, const std::string& out_dir);

std::string svg_line_chart(const LabelTimeCurves& curves, const std::string& title);

}  // namespace wsda::cli
