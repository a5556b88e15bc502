#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "boxlift/config.hpp"
#include "boxlift/evaluation.hpp"
#include "boxlift/preprocess.hpp"

namespace boxlift {

struct SynthClassSpec {
  std::string name{"Car"};
  double length_mean{4.5};
  double length_sigma{0.25};
  double bev_ratio{2.4};  // length / width, exact per object
  double height_mean{1.56};
  double height_sigma{0.08};
};

/// Where the generated 2D annotation comes from: the projected corners of the
/// true box (the full silhouette, like a human-drawn box) or the bounding
/// rectangle of the sampled returns.
enum class RectSource { corners, points };

/// Desk-scale scene generator: boxes on a ground plane seen by a single
/// forward camera, surface points sampled only from faces visible to the
/// sensor with density proportional to the cosine of incidence (floored so
/// grazing faces keep sparse returns).
struct SynthSceneSpec {
  int objects_min{2};
  int objects_max{6};
  std::vector<SynthClassSpec> classes{SynthClassSpec{}};
  double yaw_min{0.0};
  double yaw_max{2.0 * M_PI};
  // Fraction of objects whose yaw snaps to the line of sight (plus noise):
  // lane-aligned and cross traffic, the views where only one face returns
  // points and depth must come from the shape prior.
  double axis_align_prob{0.3};
  double axis_align_jitter{0.01};  // rad
  double face_density{60.0};  // points per square meter at normal incidence
  double grazing_floor{0.0};
  // Faces whose effective density falls below this return nothing (grazing
  // returns drop out, and anything sparser would fragment under clustering).
  double min_surface_density{10.0};
  RectSource rect_source{RectSource::corners};
  double rect_noise_px{0.3};  // annotation jitter per rectangle side
  double noise_sigma{0.02};   // m, isotropic
  double clearance{0.3};      // m, no returns below this height on side faces
  double focal{721.5377};
  double cx{609.5593};
  double cy{172.854};
  int image_width{1242};
  int image_height{375};
  double ground_z{-1.73};
  double ground_density{1.5};  // points per square meter
  double ground_x_min{2.0};
  double ground_x_max{48.0};
  double ground_y_half{16.0};
  double place_x_min{8.0};
  double place_x_max{38.0};
  double place_y_half{8.0};
  bool require_fully_visible{true};
  bool require_disjoint_rects{true};  // annotations may not overlap on the image
  double visibility_margin_px{5.0};   // corner clearance from the image border
  int max_placement_attempts{200};
  std::uint64_t seed{0};
};

struct SynthScene {
  Scene scene;
  std::vector<LabeledBox> gt_boxes;
  std::vector<int> point_owner;  // per cloud point: -1 ground, else GT index
};

/// Velodyne-style cloud frame (x forward, y left, z up) into a camera frame
/// (x right, y down, z forward) with the sensor at the origin.
Eigen::Matrix4d kitti_like_cloud_to_cam();

/// Deterministic given (spec, scene_seed). Throws PlacementFailure when the
/// rejection sampler cannot place an object.
SynthScene generate_synth_scene(const SynthSceneSpec& spec, std::uint64_t scene_seed);

/// synth.* keys.
SynthSceneSpec make_synth_spec(const ConfigMap& cfg);

}  // namespace boxlift
