#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "boxlift/geometry.hpp"

namespace boxlift {

struct LabeledBox {
  std::string class_label;
  Box3D box;
};

struct MatchRecord {
  std::size_t gt_index;
  std::size_t pred_index;
  double iou;
};

/// Greedy one-to-one matching within each class: highest-IoU pairs first,
/// pairs below the threshold discarded, ties broken by (gt index, pred index).
std::vector<MatchRecord> match_predictions(const std::vector<LabeledBox>& gt,
                                           const std::vector<LabeledBox>& pred, double threshold);

struct ObjectRecord {
  std::string scene_id;
  std::string class_label;
  std::size_t gt_index;
  std::optional<std::size_t> pred_index;  // absent when the GT went unmatched
  double iou{0.0};
};

struct ClassStats {
  std::size_t total_gt{0};
  std::size_t total_pred{0};
  std::size_t matched{0};           // at the base (lowest) threshold
  std::map<double, double> recall;  // threshold -> matched fraction
  std::optional<double> mean_iou;   // over base-threshold matches; absent if none
};

struct EvalReport {
  std::vector<double> thresholds;
  std::map<std::string, ClassStats> per_class;
  ClassStats global;
  std::vector<ObjectRecord> per_object;  // from the base-threshold matching
};

struct SceneBoxes {
  std::string scene_id;
  std::vector<LabeledBox> boxes;
};

/// Aggregates matching across scenes aligned by identifier. Throws
/// SceneMismatch when the identifier sets differ.
EvalReport evaluate(const std::vector<SceneBoxes>& gt_scenes,
                    const std::vector<SceneBoxes>& pred_scenes,
                    const std::vector<double>& thresholds);

}  // namespace boxlift
