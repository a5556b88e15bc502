#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "boxlift/geometry.hpp"

namespace boxlift {

struct SceneBox2D {
  std::string class_label;
  Rect2D rect;      // clamped to image bounds at load time
  Rect2D rect_raw;  // original extent before clamping
};

/// One frame worth of input: cloud, calibration, image dimensions and the 2D
/// annotations to lift.
struct Scene {
  PointCloud cloud;
  CameraCalibration calib;
  int image_width{0};
  int image_height{0};
  std::vector<SceneBox2D> boxes2d;
};

/// Plane as unit normal plus offset: normal . p + offset = 0.
struct Plane {
  Point3 normal{0.0, 0.0, 1.0};
  double offset{0.0};

  double signed_distance(const Point3& p) const {
    return normal.x * p.x + normal.y * p.y + normal.z * p.z + offset;
  }
  double distance(const Point3& p) const { return std::abs(signed_distance(p)); }
};

/// One detection target ready for fitting.
struct ObjectSample {
  std::string class_label;
  std::size_t source_index{0};  // index into Scene::boxes2d
  Rect2D rect2d;
  PointCloud in_box_points;
  Box3D initial_box;
  Rect2D constraint_rect;  // equals rect2d outdoors, union rectangle indoors
  bool degenerate_initial_box{false};
};

enum class SkipReason {
  EmptyFrustum,
  NoClusterAboveMinimum,
  NonPositiveDepth,
};

const char* to_string(SkipReason reason);

struct SkippedObject {
  std::size_t object_index;
  SkipReason reason;
};

enum class SceneMode { outdoor, indoor };

struct PrepConfig {
  SceneMode mode{SceneMode::outdoor};
  std::size_t fps_target{1'000'000};  // applied in indoor mode only
  double ransac_threshold{0.2};
  int ransac_iterations{200};
  double ransac_max_tilt_deg{30.0};  // >= 90 disables the verticality gate
  double cluster_radius{0.5};
  std::size_t min_cluster{5};
  std::uint64_t seed{0};

  static PrepConfig defaults_for(SceneMode mode);
};

struct GroundRemovalResult {
  Plane plane;
  PointCloud non_ground;
  bool ground_found{false};
};

struct PrepareResult {
  std::vector<ObjectSample> samples;
  std::vector<SkippedObject> skipped;
  Plane ground_plane;
  bool ground_found{false};
};

/// Greedy max-min downsampling; returns the cloud unchanged when it is already
/// small enough. First point drawn uniformly from the seeded generator.
PointCloud farthest_point_sampling(const PointCloud& cloud, std::size_t target_count,
                                   std::uint64_t seed);

/// 3-point plane RANSAC with a near-vertical prior on the accepted normal and
/// a least-squares refit on the winning inlier set. Points farther than the
/// threshold from the accepted plane survive. If no near-vertical plane wins,
/// the cloud passes through unchanged with ground_found = false.
GroundRemovalResult ransac_ground_removal(const PointCloud& cloud, double inlier_threshold,
                                          int iterations, std::uint64_t seed,
                                          double max_tilt_deg = 30.0);

/// Points with positive camera depth whose projection falls inside the
/// rectangle (inclusive boundaries).
PointCloud frustum_select(const PointCloud& cloud, const Rect2D& rect,
                          const CameraCalibration& calib);

/// Single-linkage clustering with the given connection radius; keeps the
/// largest cluster, ties broken by smaller mean distance to the cloud-frame
/// origin (the nearer object). Throws NoClusterAboveMinimum when every cluster
/// is smaller than min_cluster.
PointCloud largest_cluster_denoise(const PointCloud& points, double radius,
                                   std::size_t min_cluster);

struct InitialBox {
  Box3D box;
  bool degenerate{false};  // axis-aligned fallback was used
};

/// Minimum-perimeter BEV rectangle over the convex hull, z extent from the
/// point z-range. Degenerate BEV input (collinear / too few points) falls back
/// to the axis-aligned bounding box and is flagged.
InitialBox initial_pseudo_box(const PointCloud& points);

/// Union of the projected initial box's bounding rectangle with the annotated
/// 2D box, clamped to the image.
Rect2D pseudo_union_rect(const Box3D& initial_box, const Rect2D& rect2d,
                         const CameraCalibration& calib, int image_width, int image_height);

/// Full pipeline: optional FPS (indoor), ground removal, then per 2D box
/// frustum selection, denoising, initial box estimation and (indoor) the
/// union-rectangle constraint. Per-object failures land in the skip report.
PrepareResult prepare_scene(const Scene& scene, const PrepConfig& config);

}  // namespace boxlift
