#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "boxlift/errors.hpp"

namespace boxlift {

struct Point3 {
  double x{0.0};
  double y{0.0};
  double z{0.0};
};

using PointCloud = std::vector<Point3>;

// 2D coordinate, pixels (image plane) or meters (BEV), depending on context.
struct Vec2 {
  double x{0.0};
  double y{0.0};
};

/// Axis-aligned rectangle in pixel coordinates, x_min <= x_max, y_min <= y_max.
struct Rect2D {
  double x_min{0.0};
  double y_min{0.0};
  double x_max{0.0};
  double y_max{0.0};

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }

  bool contains(const Vec2& p) const {
    return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max;
  }

  static Rect2D union_of(const Rect2D& a, const Rect2D& b) {
    return {std::min(a.x_min, b.x_min), std::min(a.y_min, b.y_min),
            std::max(a.x_max, b.x_max), std::max(a.y_max, b.y_max)};
  }

  Rect2D clamped(double image_width, double image_height) const {
    auto cl = [](double v, double lo, double hi) { return std::min(std::max(v, lo), hi); };
    return {cl(x_min, 0.0, image_width), cl(y_min, 0.0, image_height),
            cl(x_max, 0.0, image_width), cl(y_max, 0.0, image_height)};
  }
};

/// 7-DoF gravity-aligned box: center (x, y, z), dimensions (l, w, h) and yaw
/// about the vertical axis stored as a (sin, cos) pair. l runs along the yaw
/// direction, w across it, h along z. Call renormalize_yaw() after updating
/// yaw_sin/yaw_cos directly.
struct Box3D {
  double x{0.0};
  double y{0.0};
  double z{0.0};
  double l{1.0};
  double w{1.0};
  double h{1.0};
  double yaw_sin{0.0};
  double yaw_cos{1.0};

  Box3D() = default;
  Box3D(double cx, double cy, double cz, double len, double wid, double hgt, double yaw)
      : x(cx), y(cy), z(cz), l(len), w(wid), h(hgt),
        yaw_sin(std::sin(yaw)), yaw_cos(std::cos(yaw)) {}

  double yaw() const { return std::atan2(yaw_sin, yaw_cos); }

  void set_yaw(double yaw) {
    yaw_sin = std::sin(yaw);
    yaw_cos = std::cos(yaw);
  }

  void renormalize_yaw() {
    const double n = std::hypot(yaw_sin, yaw_cos);
    if (n > 0.0) {
      yaw_sin /= n;
      yaw_cos /= n;
    } else {
      yaw_sin = 0.0;
      yaw_cos = 1.0;
    }
  }

  bool valid() const {
    auto finite = [](double v) { return std::isfinite(v); };
    return finite(x) && finite(y) && finite(z) && l > 0.0 && w > 0.0 && h > 0.0 &&
           std::abs(yaw_sin * yaw_sin + yaw_cos * yaw_cos - 1.0) <= 1e-9;
  }

  double volume() const { return l * w * h; }
};

/// Projection from the point-cloud frame to pixel coordinates via a 3x4
/// matrix. Also carries the rigid cloud-to-camera transform so that boxes can
/// be moved between the cloud frame and the (rectified) camera frame used by
/// KITTI label files.
class CameraCalibration {
 public:
  using Matrix34 = Eigen::Matrix<double, 3, 4>;

  CameraCalibration();
  explicit CameraCalibration(const Matrix34& projection,
                             const Eigen::Matrix4d& cloud_to_cam = Eigen::Matrix4d::Identity());

  /// Plain pinhole camera: projection = K * cloud_to_cam.
  static CameraCalibration pinhole(double fx, double fy, double cx, double cy,
                                   const Eigen::Matrix4d& cloud_to_cam = Eigen::Matrix4d::Identity());

  const Matrix34& projection() const { return projection_; }
  const Eigen::Matrix4d& cloud_to_cam() const { return cloud_to_cam_; }

  /// Camera-frame depth of a cloud-frame point (third homogeneous coordinate).
  double depth(const Point3& p) const;

  /// Homogeneous projection + perspective division. Throws NonPositiveDepth
  /// if depth <= kMinDepth.
  Vec2 project(const Point3& p) const;

  /// Non-throwing variant: false when the point lies behind or on the camera
  /// plane.
  bool project_if_visible(const Point3& p, Vec2& out) const;

  static constexpr double kMinDepth = 1e-6;  // meters

 private:
  Matrix34 projection_;
  Eigen::Matrix4d cloud_to_cam_;
};

/// Strictly convex CCW polygon in the BEV plane (meters).
struct ConvexPolygon2D {
  std::vector<Vec2> vertices;  // CCW, no three collinear

  double area() const;
};

/// Oriented BEV rectangle: center, side lengths (l >= w) and the direction of
/// the l side, normalized to [-pi/2, pi/2).
struct OrientedRectBEV {
  Vec2 center{};
  double l{0.0};
  double w{0.0};
  double yaw{0.0};

  double perimeter() const { return 2.0 * (l + w); }
};

/// The 8 corners of a box. Order is fixed: indices 0-3 walk the bottom face
/// counter-clockwise (viewed from +z) starting at the (+l/2, +w/2) corner;
/// indices 4-7 repeat the same walk on the top face.
std::array<Point3, 8> box_corners(const Box3D& box);

/// Projects every point; throws NonPositiveDepth if any lies behind or on the
/// camera plane.
std::vector<Vec2> project_points(std::span<const Point3> points, const CameraCalibration& calib);

/// Axis-aligned bounding rectangle of a nonempty pixel set. Throws EmptyInput.
Rect2D min_bounding_rect(std::span<const Vec2> pixels);

/// BEV offset of a point from the box center, rotated by -yaw: u along the
/// length axis, v along the width axis.
Vec2 to_box_frame_bev(const Point3& point, const Box3D& box);

/// Unsigned BEV distances from a point to the supporting lines of the four box
/// edges. With (u, v) = to_box_frame_bev: d[0] = |u - l/2|, d[1] = |u + l/2|
/// (edges perpendicular to the length axis), d[2] = |v - w/2|,
/// d[3] = |v + w/2| (edges perpendicular to the width axis).
std::array<double, 4> point_edge_distances_bev(const Point3& point, const Box3D& box);

/// Monotone-chain convex hull, CCW, collinear interior points removed.
/// Throws DegenerateInput for fewer than 3 effective points or all-collinear
/// input.
ConvexPolygon2D convex_hull_2d(std::span<const Vec2> points);

/// Minimum-perimeter enclosing rectangle of a convex hull (rotating calipers:
/// one side flush with a hull edge). Ties within 1e-12 broken by smaller
/// |yaw|.
OrientedRectBEV min_perimeter_rect_bev(const ConvexPolygon2D& hull);

/// CCW BEV footprint of a box (bottom-face corner order).
std::array<Vec2, 4> bev_rect_corners(const Box3D& box);

/// Area of intersection of two BEV rectangles (Sutherland-Hodgman clipping).
/// Degenerate clipping outputs yield 0.
double rotated_rect_intersection_area(const Box3D& a, const Box3D& b);

/// BEV (area) intersection-over-union.
double bev_iou(const Box3D& a, const Box3D& b);

/// 3D IoU: BEV intersection area times vertical overlap over union of volumes.
double box3d_iou(const Box3D& a, const Box3D& b);

}  // namespace boxlift
