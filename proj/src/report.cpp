#include "wsda/report.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <json.hpp>

#include "wsda/util.hpp"

namespace wsda::cli {

using nlohmann::json;

namespace {

const char* kTablePresets[] = {"source_only", "uda_image", "wsjt", "wsjt_cafa", "wsjt_cwfa", "oracle"};

struct BestRun {
  const RunSummary* run = nullptr;
  double value = 0.0;
};

// best seed at last iteration among the full-size matrix runs
BestRun best_by(const std::vector<RunSummary>& runs, const std::string& preset,
                double (*metric)(const RunSummary&)) {
  BestRun best;
  for (const RunSummary& r : runs) {
    if (r.preset != preset || r.run_dir.find("_lt_n") != std::string::npos) continue;
    const double v = metric(r);
    if (!best.run || v > best.value) {
      best.run = &r;
      best.value = v;
    }
  }
  return best;
}

std::string run_id(const RunSummary& r) {
  return r.preset + "_seed" + std::to_string(r.seed) + "@" + std::to_string(r.iterations);
}

double mask_metric(const RunSummary& r) { return r.predicted.mask_map; }
double pose_metric(const RunSummary& r) { return r.predicted.pose_ds; }

}  // namespace

ReportResult build_report(const std::vector<RunSummary>& runs, const Runner* runner_for_costs) {
  ReportResult out;
  json jreport;
  std::map<std::string, bool> seen;
  for (const RunSummary& r : runs) seen[r.preset] = true;

  auto table = [&](const char* title, double (*metric)(const RunSummary&), const char* key) {
    std::ostringstream t;
    t << title << "\n";
    t << strfmt("%-14s %8s   %s\n", "preset", "value", "source run");
    for (const char* preset : kTablePresets) {
      BestRun best = best_by(runs, preset, metric);
      if (!best.run) {
        if (!seen.count(preset)) out.missing.push_back(preset);
        continue;
      }
      t << strfmt("%-14s %8.1f   %s\n", preset, 100.0 * best.value, run_id(*best.run).c_str());
      jreport["tables"][key][preset] = {{"value", best.value}, {"run", run_id(*best.run)},
                                        {"dir", best.run->run_dir}};
    }
    return t.str();
  };

  out.mask_table = table("instance masks: mask mAP x100 (best seed, final iteration)", mask_metric, "mask");
  out.pose_table = table("pose: pose-DS x100 (best seed, final iteration)", pose_metric, "pose");

  {
    std::ostringstream t;
    t << "ground-truth boxes at test time: mask mAP / pose-DS x100 (best seed)\n";
    t << strfmt("%-14s %10s %10s   %s\n", "preset", "mask", "pose", "source run");
    for (const char* preset : kTablePresets) {
      BestRun bm = best_by(runs, preset, [](const RunSummary& r) { return r.gt_boxes.mask_map; });
      BestRun bp = best_by(runs, preset, [](const RunSummary& r) { return r.gt_boxes.pose_ds; });
      if (!bm.run || !bp.run) continue;
      t << strfmt("%-14s %10.1f %10.1f   %s | %s\n", preset, 100.0 * bm.value, 100.0 * bp.value,
                  run_id(*bm.run).c_str(), run_id(*bp.run).c_str());
      jreport["tables"]["gt_boxes"][preset] = {{"mask", bm.value},
                                               {"pose", bp.value},
                                               {"mask_run", run_id(*bm.run)},
                                               {"pose_run", run_id(*bp.run)}};
    }
    out.gt_table = t.str();
  }

  // label-time curve from the reduced-iteration subset runs
  if (runner_for_costs) {
    LabelTimeCurves curves;
    for (const RunSummary& r : runs) {
      if (r.run_dir.find("_lt_n") == std::string::npos) continue;
      CurvePoint p;
      p.value = r.predicted.mask_map;
      p.run_id = run_id(r) + "_n" + std::to_string(r.n_target_images);
      if (r.preset == "wsjt_cwfa") {
        p.time_units = runner_for_costs->label_time_units(r.n_target_images, false);
        curves.weak.push_back(p);
      } else if (r.preset == "oracle") {
        p.time_units = runner_for_costs->label_time_units(r.n_target_images, true);
        curves.full.push_back(p);
      }
    }
    auto by_time = [](const CurvePoint& a, const CurvePoint& b) { return a.time_units < b.time_units; };
    std::sort(curves.weak.begin(), curves.weak.end(), by_time);
    std::sort(curves.full.begin(), curves.full.end(), by_time);
    if (!curves.weak.empty() && !curves.full.empty()) {
      out.curves = curves;
      for (const CurvePoint& p : curves.weak)
        jreport["label_time"]["weak"].push_back({{"time", p.time_units}, {"mask_map", p.value}, {"run", p.run_id}});
      for (const CurvePoint& p : curves.full)
        jreport["label_time"]["full"].push_back({{"time", p.time_units}, {"mask_map", p.value}, {"run", p.run_id}});
    }
  }

  jreport["missing"] = out.missing;
  out.json = jreport.dump(2);
  return out;
}

std::string svg_line_chart(const LabelTimeCurves& curves, const std::string& title) {
  const int w = 640, h = 400, ml = 60, mr = 20, mt = 40, mb = 50;
  double tmax = 1.0, vmax = 0.05;
  for (const auto& p : curves.weak) {
    tmax = std::max(tmax, p.time_units);
    vmax = std::max(vmax, p.value);
  }
  for (const auto& p : curves.full) {
    tmax = std::max(tmax, p.time_units);
    vmax = std::max(vmax, p.value);
  }
  vmax = std::min(1.0, vmax * 1.15);
  auto X = [&](double t) { return ml + (w - ml - mr) * t / tmax; };
  auto Y = [&](double v) { return h - mb - (h - mt - mb) * v / vmax; };

  std::ostringstream s;
  s << strfmt("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\">\n", w, h);
  s << strfmt("<rect width=\"%d\" height=\"%d\" fill=\"white\"/>\n", w, h);
  s << strfmt("<text x=\"%d\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">%s</text>\n", ml,
              title.c_str());
  s << strfmt("<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", ml, h - mb, w - mr, h - mb);
  s << strfmt("<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", ml, mt, ml, h - mb);
  s << strfmt("<text x=\"%d\" y=\"%d\" font-family=\"sans-serif\" font-size=\"12\">label time [units]</text>\n",
              (w - ml) / 2, h - 12);
  s << strfmt(
      "<text x=\"14\" y=\"%d\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 14 %d)\">mask "
      "mAP</text>\n",
      (h + mt) / 2, (h + mt) / 2);

  auto polyline = [&](const std::vector<CurvePoint>& pts, const char* color, const char* name, int ty) {
    if (pts.empty()) return;
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const CurvePoint& p : pts) s << strfmt("%.1f,%.1f ", X(p.time_units), Y(p.value));
    s << "\"/>\n";
    for (const CurvePoint& p : pts)
      s << strfmt("<circle cx=\"%.1f\" cy=\"%.1f\" r=\"3\" fill=\"%s\"/>\n", X(p.time_units), Y(p.value), color);
    s << strfmt("<text x=\"%d\" y=\"%d\" font-family=\"sans-serif\" font-size=\"12\" fill=\"%s\">%s</text>\n",
                w - mr - 220, ty, color, name);
  };
  polyline(curves.weak, "#c0392b", "weak 2D boxes (wsjt_cwfa)", mt + 16);
  polyline(curves.full, "#27ae60", "full labels (oracle)", mt + 32);
  s << "</svg>\n";
  return s.str();
}

void write_report_files(const ReportResult& r, const std::string& out_dir) {
  ensure_dir(out_dir);
  write_file(out_dir + "/table_mask.txt", r.mask_table);
  write_file(out_dir + "/table_pose.txt", r.pose_table);
  write_file(out_dir + "/table_gt_boxes.txt", r.gt_table);
  write_file(out_dir + "/report.json", r.json + "\n");
  if (r.curves) {
    std::ostringstream csv;
    csv << "curve,time_units,mask_map,run\n";
    for (const CurvePoint& p : r.curves->weak)
      csv << strfmt("weak,%.1f,%.6f,%s\n", p.time_units, p.value, p.run_id.c_str());
    for (const CurvePoint& p : r.curves->full)
      csv << strfmt("full,%.1f,%.6f,%s\n", p.time_units, p.value, p.run_id.c_str());
    write_file(out_dir + "/label_time.csv", csv.str());
    write_file(out_dir + "/label_time.svg", svg_line_chart(*r.curves, "mask mAP over label time"));
  }
}

}  // namespace wsda::cli
