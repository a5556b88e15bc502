#include "boxlift/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "boxlift/config.hpp"
#include "boxlift/evaluation.hpp"
#include "boxlift/fitter.hpp"
#include "boxlift/kitti_io.hpp"
#include "boxlift/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace boxlift {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;

  ConfigMap load() const {
    ConfigMap cfg;
    if (!config_path.empty()) cfg = ConfigMap::from_file(config_path);
    for (const std::string& kv : overrides) cfg.apply_override(kv);
    return cfg;
  }
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "key=value configuration file");
  cmd->add_option("--set", opts.overrides, "override a config key (key=value, repeatable)");
}

std::string scene_name(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06zu", index);
  return buf;
}

std::vector<std::string> discover_scene_ids(const fs::path& dir, const std::string& sub,
                                            const std::string& ext) {
  const fs::path base = dir / sub;
  if (!fs::is_directory(base)) {
    throw IoFailure("scene directory " + base.string() + " does not exist");
  }
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(base)) {
    if (entry.path().extension() == ext) ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

json json_from_stats(const ClassStats& stats) {
  json j;
  j["total_gt"] = stats.total_gt;
  j["total_pred"] = stats.total_pred;
  j["matched"] = stats.matched;
  if (stats.mean_iou) {
    j["mean_iou"] = *stats.mean_iou;
  } else {
    j["mean_iou"] = nullptr;
  }
  json recall = json::object();
  for (const auto& [thr, r] : stats.recall) {
    char key[32];
    std::snprintf(key, sizeof(key), "%g", thr);
    recall[key] = r;
  }
  j["recall"] = recall;
  return j;
}

json json_from_report(const EvalReport& report) {
  json j;
  j["thresholds"] = report.thresholds;
  j["global"] = json_from_stats(report.global);
  json per_class = json::object();
  for (const auto& [cls, stats] : report.per_class) per_class[cls] = json_from_stats(stats);
  j["per_class"] = per_class;
  json objects = json::array();
  for (const ObjectRecord& rec : report.per_object) {
    json o;
    o["scene"] = rec.scene_id;
    o["class"] = rec.class_label;
    o["gt_index"] = rec.gt_index;
    if (rec.pred_index) {
      o["pred_index"] = *rec.pred_index;
    } else {
      o["pred_index"] = nullptr;
    }
    o["iou"] = rec.iou;
    objects.push_back(o);
  }
  j["per_object"] = objects;
  return j;
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw IoFailure("short write on " + path.string());
}

// --- synth ------------------------------------------------------------------

int run_synth(const CommonOpts& common, const std::string& out_dir, int scenes_flag,
              std::int64_t seed_flag) {
  ConfigMap cfg = common.load();
  if (seed_flag >= 0) cfg.set("synth.seed", std::to_string(seed_flag));
  const SynthSceneSpec spec = make_synth_spec(cfg);
  const int scene_count = scenes_flag > 0 ? scenes_flag : cfg.get_int("synth.scenes", 50);

  const fs::path out(out_dir);
  fs::create_directories(out / "velodyne");
  fs::create_directories(out / "calib");
  fs::create_directories(out / "label_2");

  for (int i = 0; i < scene_count; ++i) {
    const SynthScene synth = generate_synth_scene(spec, static_cast<std::uint64_t>(i));
    const std::string id = scene_name(static_cast<std::size_t>(i));
    write_velodyne_file(out / "velodyne" / (id + ".bin"), synth.scene.cloud);
    write_kitti_calib_file(out / "calib" / (id + ".txt"), synth.scene.calib);
    std::vector<KittiLabelRow> rows;
    for (std::size_t g = 0; g < synth.gt_boxes.size(); ++g) {
      rows.push_back(label_from_box(synth.gt_boxes[g].class_label, synth.gt_boxes[g].box,
                                    synth.scene.boxes2d[g].rect, synth.scene.calib));
    }
    write_kitti_label_file(out / "label_2" / (id + ".txt"), rows);
  }

  // Snapshot of the effective configuration, for reproducibility.
  std::string snapshot;
  for (const auto& [k, v] : cfg.values()) snapshot += k + " = " + v + "\n";
  write_text_file(out / "synth_config.txt", snapshot);

  std::cout << "wrote " << scene_count << " scenes to " << out.string() << "\n";
  return 0;
}

// --- fit --------------------------------------------------------------------

int run_fit(const CommonOpts& common, const std::string& scenes_dir, const std::string& out_dir,
            int workers_flag) {
  ConfigMap cfg = common.load();
  if (workers_flag > 0) cfg.set("fit.workers", std::to_string(workers_flag));
  const PrepConfig prep_base = make_prep_config(cfg);
  const FitConfig fit_cfg = make_fit_config(cfg);
  const int width = cfg.get_int("scene.image_width", 1242);
  const int height = cfg.get_int("scene.image_height", 375);

  const fs::path in(scenes_dir);
  const fs::path out(out_dir);
  fs::create_directories(out / "labels");
  const auto ids = discover_scene_ids(in, "velodyne", ".bin");
  if (ids.empty()) throw IoFailure("no velodyne scenes found under " + in.string());

  json report;
  report["scenes"] = json::array();
  std::size_t total_objects = 0, fitted = 0, skipped = 0, failed = 0;

  for (std::size_t s = 0; s < ids.size(); ++s) {
    const std::string& id = ids[s];
    const KittiScene kitti =
        read_kitti_scene(in / "velodyne" / (id + ".bin"), in / "calib" / (id + ".txt"),
                         in / "label_2" / (id + ".txt"), width, height);

    PrepConfig prep = prep_base;
    prep.seed = mix_seed(prep_base.seed, s);
    const PrepareResult prepared = prepare_scene(kitti.scene, prep);
    const auto outcomes =
        fit_scene(prepared.samples, kitti.scene.calib, width, height, fit_cfg);

    json scene_json;
    scene_json["id"] = id;
    scene_json["objects"] = json::array();
    std::vector<std::tuple<std::string, Box3D, Rect2D>> results;

    for (const SkippedObject& skip : prepared.skipped) {
      json o;
      o["index"] = skip.object_index;
      o["class"] = kitti.scene.boxes2d[skip.object_index].class_label;
      o["status"] = "skipped";
      o["reason"] = to_string(skip.reason);
      scene_json["objects"].push_back(o);
      ++skipped;
    }
    for (const FitOutcome& outcome : outcomes) {
      const ObjectSample& sample = prepared.samples[outcome.sample_index];
      json o;
      o["index"] = sample.source_index;
      o["class"] = sample.class_label;
      if (outcome.result) {
        const FitResult& r = *outcome.result;
        o["status"] = "fitted";
        o["initial_total"] = r.initial_losses.total;
        o["final_total"] = r.final_losses.total;
        o["iterations"] = r.iterations_used;
        o["start_index"] = r.start_index;
        o["converged"] = r.converged;
        o["srl_disabled"] = r.srl_disabled;
        results.emplace_back(sample.class_label, r.box, sample.rect2d);
        ++fitted;
      } else {
        o["status"] = "failed";
        o["error"] = outcome.error;
        ++failed;
      }
      scene_json["objects"].push_back(o);
    }
    total_objects += kitti.scene.boxes2d.size();
    report["scenes"].push_back(scene_json);

    write_kitti_labels(out / "labels" / (id + ".txt"), results, kitti.scene.calib);
  }

  report["summary"] = {{"scenes", ids.size()},
                       {"objects", total_objects},
                       {"fitted", fitted},
                       {"skipped", skipped},
                       {"failed", failed}};
  write_text_file(out / "fit_report.json", report.dump(2) + "\n");

  std::cout << "fitted " << fitted << "/" << total_objects << " objects across " << ids.size()
            << " scenes (" << skipped << " skipped, " << failed << " failed)\n";
  return (skipped > 0 || failed > 0) ? 1 : 0;
}

// --- eval -------------------------------------------------------------------

int run_eval(const CommonOpts& common, const std::string& gt_dir, const std::string& pred_dir,
             const std::string& out_path, const std::string& csv_path,
             std::vector<double> thresholds) {
  ConfigMap cfg = common.load();
  const int width = cfg.get_int("scene.image_width", 1242);
  const int height = cfg.get_int("scene.image_height", 375);
  if (thresholds.empty()) thresholds = {0.25, 0.5, 0.7};

  const fs::path gt(gt_dir);
  const fs::path pred(pred_dir);
  const auto ids = discover_scene_ids(gt, "label_2", ".txt");
  if (ids.empty()) throw IoFailure("no label files under " + (gt / "label_2").string());

  std::vector<SceneBoxes> gt_scenes, pred_scenes;
  for (const std::string& id : ids) {
    const CameraCalibration calib = read_kitti_calib_file(gt / "calib" / (id + ".txt"));

    SceneBoxes g{id, {}};
    for (const KittiLabelRow& row : read_kitti_label_file(gt / "label_2" / (id + ".txt"))) {
      g.boxes.push_back({row.type, box_from_label(row, calib)});
    }
    gt_scenes.push_back(std::move(g));

    const fs::path pred_file = pred / (id + ".txt");
    if (!fs::exists(pred_file)) {
      throw SceneMismatch("no prediction file for scene " + id + " under " + pred.string());
    }
    SceneBoxes p{id, {}};
    for (const KittiLabelRow& row : read_kitti_label_file(pred_file)) {
      p.boxes.push_back({row.type, box_from_label(row, calib)});
    }
    pred_scenes.push_back(std::move(p));
    (void)width;
    (void)height;
  }

  const EvalReport report = evaluate(gt_scenes, pred_scenes, thresholds);
  const json j = json_from_report(report);
  if (out_path.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    write_text_file(out_path, j.dump(2) + "\n");
  }

  if (!csv_path.empty()) {
    std::string csv = "scene,class,gt_index,pred_index,iou\n";
    char buf[160];
    for (const ObjectRecord& rec : report.per_object) {
      const std::string pred_idx = rec.pred_index ? std::to_string(*rec.pred_index) : "";
      std::snprintf(buf, sizeof(buf), "%s,%s,%zu,%s,%.6f\n", rec.scene_id.c_str(),
                    rec.class_label.c_str(), rec.gt_index, pred_idx.c_str(), rec.iou);
      csv += buf;
    }
    write_text_file(csv_path, csv);
  }
  return 0;
}

// --- loss-debug -------------------------------------------------------------

int run_loss_debug(const CommonOpts& common, const std::string& scenes_dir, const std::string& id,
                   std::size_t object_index, const std::string& box_override) {
  ConfigMap cfg = common.load();
  const PrepConfig prep = make_prep_config(cfg);
  const FitConfig fit_cfg = make_fit_config(cfg);
  const int width = cfg.get_int("scene.image_width", 1242);
  const int height = cfg.get_int("scene.image_height", 375);

  const fs::path in(scenes_dir);
  const KittiScene kitti =
      read_kitti_scene(in / "velodyne" / (id + ".bin"), in / "calib" / (id + ".txt"),
                       in / "label_2" / (id + ".txt"), width, height);
  const PrepareResult prepared = prepare_scene(kitti.scene, prep);

  const ObjectSample* sample = nullptr;
  for (const ObjectSample& s : prepared.samples) {
    if (s.source_index == object_index) sample = &s;
  }
  if (!sample) {
    for (const SkippedObject& s : prepared.skipped) {
      if (s.object_index == object_index) {
        throw Error("object " + std::to_string(object_index) + " was skipped: " +
                    to_string(s.reason));
      }
    }
    throw Error("object index " + std::to_string(object_index) + " out of range");
  }

  Box3D box = sample->initial_box;
  if (!box_override.empty()) {
    std::istringstream ss(box_override);
    std::vector<double> v;
    double x;
    while (ss >> x) {
      v.push_back(x);
      if (ss.peek() == ',') ss.ignore();
    }
    if (v.size() != 7) throw ConfigError("--box expects 7 comma-separated values");
    box = Box3D(v[0], v[1], v[2], v[3], v[4], v[5], v[6]);
  }

  double prior = 1.0;
  LossWeights weights = fit_cfg.weights;
  if (const auto it = fit_cfg.ratio_priors.find(sample->class_label);
      it != fit_cfg.ratio_priors.end()) {
    prior = it->second;
  } else {
    weights.lambda_srl = 0.0;
  }
  const BplSideMask mask =
      border_mask(sample->constraint_rect, width, height, fit_cfg.border_margin);

  const LossBreakdown losses =
      total_loss(*sample, box, kitti.scene.calib, weights, prior, mask, fit_cfg.pal_form);
  const GradientResult numeric = loss_gradient(*sample, box, kitti.scene.calib, weights, prior,
                                               GradientMode::numeric, mask, fit_cfg.pal_form);
  const GradientResult analytic = loss_gradient(*sample, box, kitti.scene.calib, weights, prior,
                                                GradientMode::analytic, mask, fit_cfg.pal_form);

  json j;
  j["object"] = object_index;
  j["class"] = sample->class_label;
  j["points"] = sample->in_box_points.size();
  j["box"] = {box.x, box.y, box.z, box.l, box.w, box.h, box.yaw()};
  j["losses"] = {{"bpl", losses.bpl},
                 {"srl", losses.srl},
                 {"pal_coverage", losses.pal_coverage},
                 {"pal_tightness", losses.pal_tightness},
                 {"total", losses.total}};
  j["gradient_numeric"] = numeric.gradient;
  j["gradient_analytic"] = analytic.gradient;
  j["flagged_numeric"] = numeric.flagged;
  j["flagged_analytic"] = analytic.flagged;
  j["bpl_mask"] = {{"x_min", mask.x_min},
                   {"y_min", mask.y_min},
                   {"x_max", mask.x_max},
                   {"y_max", mask.y_max}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

// --- plot-data ---------------------------------------------------------------

int run_plot_data(const std::vector<std::string>& reports, const std::vector<double>& xs,
                  const std::string& out_path) {
  if (!xs.empty() && xs.size() != reports.size()) {
    throw ConfigError("--x must be given once per --report");
  }

  std::vector<json> parsed;
  std::vector<std::string> threshold_keys;
  for (const std::string& path : reports) {
    std::ifstream in(path);
    if (!in) throw IoFailure("cannot open report " + path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw IoFailure("cannot parse report " + path + ": " + e.what());
    }
    for (const auto& [key, value] : j["global"]["recall"].items()) {
      if (std::find(threshold_keys.begin(), threshold_keys.end(), key) == threshold_keys.end()) {
        threshold_keys.push_back(key);
      }
    }
    parsed.push_back(std::move(j));
  }
  std::sort(threshold_keys.begin(), threshold_keys.end(),
            [](const std::string& a, const std::string& b) { return std::stod(a) < std::stod(b); });

  std::string csv = "x,report,class,total_gt,matched,mean_iou";
  for (const std::string& key : threshold_keys) csv += ",recall_" + key;
  csv += "\n";

  char buf[64];
  auto append_row = [&](double x, const std::string& path, const std::string& cls,
                        const json& stats) {
    std::snprintf(buf, sizeof(buf), "%g", x);
    csv += std::string(buf) + "," + path + "," + cls + ",";
    csv += std::to_string(stats["total_gt"].get<std::size_t>()) + ",";
    csv += std::to_string(stats["matched"].get<std::size_t>()) + ",";
    if (stats["mean_iou"].is_null()) {
      csv += "";
    } else {
      std::snprintf(buf, sizeof(buf), "%.6f", stats["mean_iou"].get<double>());
      csv += buf;
    }
    for (const std::string& key : threshold_keys) {
      csv += ",";
      if (stats["recall"].contains(key)) {
        std::snprintf(buf, sizeof(buf), "%.6f", stats["recall"][key].get<double>());
        csv += buf;
      }
    }
    csv += "\n";
  };

  for (std::size_t i = 0; i < parsed.size(); ++i) {
    const double x = xs.empty() ? static_cast<double>(i) : xs[i];
    append_row(x, reports[i], "all", parsed[i]["global"]);
    for (const auto& [cls, stats] : parsed[i]["per_class"].items()) {
      append_row(x, reports[i], cls, stats);
    }
  }

  if (out_path.empty()) {
    std::cout << csv;
  } else {
    write_text_file(out_path, csv);
  }
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"2D-box to 3D pseudo-label fitting"};
  app.require_subcommand(1);

  CommonOpts synth_common, fit_common, eval_common, debug_common;

  auto* synth_cmd = app.add_subcommand("synth", "generate synthetic KITTI-format scenes");
  std::string synth_out;
  int synth_scenes = 0;
  std::int64_t synth_seed = -1;
  add_common(synth_cmd, synth_common);
  synth_cmd->add_option("--out", synth_out, "output scene directory")->required();
  synth_cmd->add_option("--scenes", synth_scenes, "number of scenes (overrides synth.scenes)");
  synth_cmd->add_option("--seed", synth_seed, "generator seed (overrides synth.seed)");

  auto* fit_cmd = app.add_subcommand("fit", "fit pseudo labels for a scene directory");
  std::string fit_scenes_dir, fit_out;
  int fit_workers = 0;
  add_common(fit_cmd, fit_common);
  fit_cmd->add_option("--scenes", fit_scenes_dir, "input scene directory")->required();
  fit_cmd->add_option("--out", fit_out, "output directory")->required();
  fit_cmd->add_option("--workers", fit_workers, "worker threads (overrides fit.workers)");

  auto* eval_cmd = app.add_subcommand("eval", "score predictions against ground truth");
  std::string eval_gt, eval_pred, eval_out, eval_csv;
  std::vector<double> eval_thresholds;
  add_common(eval_cmd, eval_common);
  eval_cmd->add_option("--gt", eval_gt, "ground-truth scene directory")->required();
  eval_cmd->add_option("--pred", eval_pred, "directory of predicted label files")->required();
  eval_cmd->add_option("--out", eval_out, "write the JSON report here (default: stdout)");
  eval_cmd->add_option("--csv", eval_csv, "write per-object IoU rows here");
  eval_cmd->add_option("--thresholds", eval_thresholds, "IoU thresholds (default 0.25 0.5 0.7)");

  auto* debug_cmd = app.add_subcommand("loss-debug", "dump the loss breakdown for one object");
  std::string debug_scenes, debug_id, debug_box;
  std::size_t debug_object = 0;
  add_common(debug_cmd, debug_common);
  debug_cmd->add_option("--scenes", debug_scenes, "input scene directory")->required();
  debug_cmd->add_option("--id", debug_id, "scene identifier, e.g. 000042")->required();
  debug_cmd->add_option("--object", debug_object, "object index within the scene")->required();
  debug_cmd->add_option("--box", debug_box, "evaluate at x,y,z,l,w,h,yaw instead of the initial box");

  auto* plot_cmd = app.add_subcommand("plot-data", "flatten eval reports into CSV series");
  std::vector<std::string> plot_reports;
  std::vector<double> plot_xs;
  std::string plot_out;
  plot_cmd->add_option("--report", plot_reports, "eval report JSON (repeatable)")->required();
  plot_cmd->add_option("--x", plot_xs, "x value per report (e.g. the swept ratio)");
  plot_cmd->add_option("--out", plot_out, "output CSV path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      return app.exit(e);
    }
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth_common, synth_out, synth_scenes, synth_seed);
    if (fit_cmd->parsed()) return run_fit(fit_common, fit_scenes_dir, fit_out, fit_workers);
    if (eval_cmd->parsed()) {
      return run_eval(eval_common, eval_gt, eval_pred, eval_out, eval_csv, eval_thresholds);
    }
    if (debug_cmd->parsed()) {
      return run_loss_debug(debug_common, debug_scenes, debug_id, debug_object, debug_box);
    }
    if (plot_cmd->parsed()) return run_plot_data(plot_reports, plot_xs, plot_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace boxlift
