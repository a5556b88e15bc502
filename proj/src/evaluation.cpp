#include "boxlift/evaluation.hpp"

#include <algorithm>

namespace boxlift {

std::vector<MatchRecord> match_predictions(const std::vector<LabeledBox>& gt,
                                           const std::vector<LabeledBox>& pred, double threshold) {
  std::vector<MatchRecord> candidates;
  for (std::size_t g = 0; g < gt.size(); ++g) {
    for (std::size_t p = 0; p < pred.size(); ++p) {
      if (gt[g].class_label != pred[p].class_label) continue;
      const double iou = box3d_iou(gt[g].box, pred[p].box);
      if (iou >= threshold) candidates.push_back({g, p, iou});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const MatchRecord& a, const MatchRecord& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.gt_index != b.gt_index) return a.gt_index < b.gt_index;
    return a.pred_index < b.pred_index;
  });

  std::vector<bool> gt_used(gt.size(), false), pred_used(pred.size(), false);
  std::vector<MatchRecord> matches;
  for (const MatchRecord& c : candidates) {
    if (gt_used[c.gt_index] || pred_used[c.pred_index]) continue;
    gt_used[c.gt_index] = true;
    pred_used[c.pred_index] = true;
    matches.push_back(c);
  }
  return matches;
}

EvalReport evaluate(const std::vector<SceneBoxes>& gt_scenes,
                    const std::vector<SceneBoxes>& pred_scenes,
                    const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw EmptyInput("evaluate: no thresholds");
  if (gt_scenes.size() != pred_scenes.size()) {
    throw SceneMismatch("evaluate: " + std::to_string(gt_scenes.size()) + " GT scenes vs " +
                        std::to_string(pred_scenes.size()) + " prediction scenes");
  }

  // Align by identifier regardless of input order.
  auto index_by_id = [](const std::vector<SceneBoxes>& scenes) {
    std::map<std::string, const SceneBoxes*> m;
    for (const SceneBoxes& s : scenes) m[s.scene_id] = &s;
    return m;
  };
  const auto gt_by_id = index_by_id(gt_scenes);
  const auto pred_by_id = index_by_id(pred_scenes);
  for (const auto& [id, unused] : gt_by_id) {
    if (!pred_by_id.count(id)) throw SceneMismatch("evaluate: no predictions for scene " + id);
  }

  EvalReport report;
  report.thresholds = thresholds;
  const double base = *std::min_element(thresholds.begin(), thresholds.end());

  std::map<std::string, std::map<double, std::size_t>> matched_at;  // class -> thr -> count
  std::map<std::string, double> iou_sum;
  std::map<double, std::size_t> global_matched;

  for (const auto& [id, gt_scene] : gt_by_id) {
    const SceneBoxes& pred_scene = *pred_by_id.at(id);
    for (const LabeledBox& g : gt_scene->boxes) {
      report.per_class[g.class_label].total_gt++;
      report.global.total_gt++;
    }
    for (const LabeledBox& p : pred_scene.boxes) {
      report.per_class[p.class_label].total_pred++;
      report.global.total_pred++;
    }

    for (double thr : thresholds) {
      const auto matches = match_predictions(gt_scene->boxes, pred_scene.boxes, thr);
      for (const MatchRecord& m : matches) {
        const std::string& cls = gt_scene->boxes[m.gt_index].class_label;
        matched_at[cls][thr]++;
        global_matched[thr]++;
        if (thr == base) {
          report.per_class[cls].matched++;
          report.global.matched++;
          iou_sum[cls] += m.iou;
        }
      }
      if (thr == base) {
        std::vector<std::optional<MatchRecord>> by_gt(gt_scene->boxes.size());
        for (const MatchRecord& m : matches) by_gt[m.gt_index] = m;
        for (std::size_t g = 0; g < gt_scene->boxes.size(); ++g) {
          ObjectRecord rec;
          rec.scene_id = id;
          rec.class_label = gt_scene->boxes[g].class_label;
          rec.gt_index = g;
          if (by_gt[g]) {
            rec.pred_index = by_gt[g]->pred_index;
            rec.iou = by_gt[g]->iou;
          }
          report.per_object.push_back(rec);
        }
      }
    }
  }

  for (auto& [cls, stats] : report.per_class) {
    for (double thr : thresholds) {
      if (stats.total_gt > 0) {
        stats.recall[thr] = static_cast<double>(matched_at[cls][thr]) / stats.total_gt;
      }
    }
    if (stats.matched > 0) stats.mean_iou = iou_sum[cls] / static_cast<double>(stats.matched);
  }
  for (double thr : thresholds) {
    if (report.global.total_gt > 0) {
      report.global.recall[thr] =
          static_cast<double>(global_matched[thr]) / report.global.total_gt;
    }
  }
  if (report.global.matched > 0) {
    double total = 0.0;
    for (const auto& [cls, s] : iou_sum) total += s;
    report.global.mean_iou = total / static_cast<double>(report.global.matched);
  }
  return report;
}

}  // namespace boxlift
