#include "boxlift/geometry.hpp"

#include <algorithm>
#include <limits>

namespace boxlift {

namespace {

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

double shoelace_area(const std::vector<Vec2>& poly) {
  double s = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % n];
    s += p.x * q.y - p.y * q.x;
  }
  return 0.5 * s;
}

// Wraps an angle into [-pi/2, pi/2).
double wrap_half_pi(double a) {
  while (a < -M_PI_2) a += M_PI;
  while (a >= M_PI_2) a -= M_PI;
  return a;
}

}  // namespace

CameraCalibration::CameraCalibration()
    : projection_(Matrix34::Zero()), cloud_to_cam_(Eigen::Matrix4d::Identity()) {
  projection_(0, 0) = 1.0;
  projection_(1, 1) = 1.0;
  projection_(2, 2) = 1.0;
}

CameraCalibration::CameraCalibration(const Matrix34& projection, const Eigen::Matrix4d& cloud_to_cam)
    : projection_(projection), cloud_to_cam_(cloud_to_cam) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(projection);
  if (lu.rank() < 3) {
    throw MalformedCalib("projection matrix is rank-deficient");
  }
}

CameraCalibration CameraCalibration::pinhole(double fx, double fy, double cx, double cy,
                                             const Eigen::Matrix4d& cloud_to_cam) {
  Matrix34 k = Matrix34::Zero();
  k(0, 0) = fx;
  k(0, 2) = cx;
  k(1, 1) = fy;
  k(1, 2) = cy;
  k(2, 2) = 1.0;
  return CameraCalibration(k * cloud_to_cam, cloud_to_cam);
}

double CameraCalibration::depth(const Point3& p) const {
  return projection_(2, 0) * p.x + projection_(2, 1) * p.y + projection_(2, 2) * p.z +
         projection_(2, 3);
}

Vec2 CameraCalibration::project(const Point3& p) const {
  const double zc = depth(p);
  if (zc <= kMinDepth) {
    throw NonPositiveDepth("point projects with depth " + std::to_string(zc));
  }
  const double xc =
      projection_(0, 0) * p.x + projection_(0, 1) * p.y + projection_(0, 2) * p.z + projection_(0, 3);
  const double yc =
      projection_(1, 0) * p.x + projection_(1, 1) * p.y + projection_(1, 2) * p.z + projection_(1, 3);
  return {xc / zc, yc / zc};
}

bool CameraCalibration::project_if_visible(const Point3& p, Vec2& out) const {
  const double zc = depth(p);
  if (zc <= kMinDepth) return false;
  const double xc =
      projection_(0, 0) * p.x + projection_(0, 1) * p.y + projection_(0, 2) * p.z + projection_(0, 3);
  const double yc =
      projection_(1, 0) * p.x + projection_(1, 1) * p.y + projection_(1, 2) * p.z + projection_(1, 3);
  out = {xc / zc, yc / zc};
  return true;
}

double ConvexPolygon2D::area() const {
  if (vertices.size() < 3) return 0.0;
  return shoelace_area(vertices);
}

std::array<Point3, 8> box_corners(const Box3D& box) {
  // Bottom face CCW from (+l/2, +w/2), then top face in the same order.
  static constexpr double kU[4] = {+0.5, -0.5, -0.5, +0.5};
  static constexpr double kV[4] = {+0.5, +0.5, -0.5, -0.5};
  std::array<Point3, 8> out;
  const double c = box.yaw_cos;
  const double s = box.yaw_sin;
  for (int i = 0; i < 4; ++i) {
    const double u = kU[i] * box.l;
    const double v = kV[i] * box.w;
    const double wx = box.x + c * u - s * v;
    const double wy = box.y + s * u + c * v;
    out[i] = {wx, wy, box.z - 0.5 * box.h};
    out[i + 4] = {wx, wy, box.z + 0.5 * box.h};
  }
  return out;
}

std::vector<Vec2> project_points(std::span<const Point3> points, const CameraCalibration& calib) {
  std::vector<Vec2> out;
  out.reserve(points.size());
  for (const Point3& p : points) {
    out.push_back(calib.project(p));
  }
  return out;
}

Rect2D min_bounding_rect(std::span<const Vec2> pixels) {
  if (pixels.empty()) {
    throw EmptyInput("min_bounding_rect: no pixels");
  }
  Rect2D r{pixels[0].x, pixels[0].y, pixels[0].x, pixels[0].y};
  for (const Vec2& p : pixels) {
    r.x_min = std::min(r.x_min, p.x);
    r.y_min = std::min(r.y_min, p.y);
    r.x_max = std::max(r.x_max, p.x);
    r.y_max = std::max(r.y_max, p.y);
  }
  return r;
}

Vec2 to_box_frame_bev(const Point3& point, const Box3D& box) {
  const double dx = point.x - box.x;
  const double dy = point.y - box.y;
  return {box.yaw_cos * dx + box.yaw_sin * dy, -box.yaw_sin * dx + box.yaw_cos * dy};
}

std::array<double, 4> point_edge_distances_bev(const Point3& point, const Box3D& box) {
  const Vec2 uv = to_box_frame_bev(point, box);
  return {std::abs(uv.x - 0.5 * box.l), std::abs(uv.x + 0.5 * box.l),
          std::abs(uv.y - 0.5 * box.w), std::abs(uv.y + 0.5 * box.w)};
}

ConvexPolygon2D convex_hull_2d(std::span<const Vec2> points) {
  std::vector<Vec2> pts(points.begin(), points.end());
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Vec2& a, const Vec2& b) { return a.x == b.x && a.y == b.y; }),
            pts.end());
  if (pts.size() < 3) {
    throw DegenerateInput("convex_hull_2d: fewer than 3 distinct points");
  }

  // Monotone chain; strict turns only, so collinear points are dropped.
  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  const std::size_t lower = k + 1;
  for (std::size_t i = pts.size() - 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);

  if (hull.size() < 3) {
    throw DegenerateInput("convex_hull_2d: all points collinear");
  }
  return ConvexPolygon2D{std::move(hull)};
}

OrientedRectBEV min_perimeter_rect_bev(const ConvexPolygon2D& hull) {
  const auto& v = hull.vertices;
  if (v.size() < 3) {
    throw DegenerateInput("min_perimeter_rect_bev: invalid hull");
  }

  OrientedRectBEV best;
  double best_perimeter = std::numeric_limits<double>::infinity();

  for (std::size_t i = 0; i < v.size(); ++i) {
    const Vec2& a = v[i];
    const Vec2& b = v[(i + 1) % v.size()];
    const double theta = std::atan2(b.y - a.y, b.x - a.x);
    const double c = std::cos(theta);
    const double s = std::sin(theta);

    double min_x = std::numeric_limits<double>::infinity();
    double max_x = -std::numeric_limits<double>::infinity();
    double min_y = std::numeric_limits<double>::infinity();
    double max_y = -std::numeric_limits<double>::infinity();
    for (const Vec2& p : v) {
      const double xr = c * p.x + s * p.y;
      const double yr = -s * p.x + c * p.y;
      min_x = std::min(min_x, xr);
      max_x = std::max(max_x, xr);
      min_y = std::min(min_y, yr);
      max_y = std::max(max_y, yr);
    }

    const double ext_x = max_x - min_x;
    const double ext_y = max_y - min_y;
    const double perimeter = 2.0 * (ext_x + ext_y);

    OrientedRectBEV cand;
    if (ext_x >= ext_y) {
      cand.l = ext_x;
      cand.w = ext_y;
      cand.yaw = wrap_half_pi(theta);
    } else {
      cand.l = ext_y;
      cand.w = ext_x;
      cand.yaw = wrap_half_pi(theta + M_PI_2);
    }
    const double cx = 0.5 * (min_x + max_x);
    const double cy = 0.5 * (min_y + max_y);
    cand.center = {c * cx - s * cy, s * cx + c * cy};

    if (perimeter < best_perimeter - 1e-12) {
      best_perimeter = perimeter;
      best = cand;
    } else if (perimeter <= best_perimeter + 1e-12 && std::abs(cand.yaw) < std::abs(best.yaw)) {
      best = cand;
    }
  }
  return best;
}

std::array<Vec2, 4> bev_rect_corners(const Box3D& box) {
  static constexpr double kU[4] = {+0.5, -0.5, -0.5, +0.5};
  static constexpr double kV[4] = {+0.5, +0.5, -0.5, -0.5};
  std::array<Vec2, 4> out;
  for (int i = 0; i < 4; ++i) {
    const double u = kU[i] * box.l;
    const double v = kV[i] * box.w;
    out[i] = {box.x + box.yaw_cos * u - box.yaw_sin * v, box.y + box.yaw_sin * u + box.yaw_cos * v};
  }
  return out;
}

double rotated_rect_intersection_area(const Box3D& a, const Box3D& b) {
  const auto ca = bev_rect_corners(a);
  const auto cb = bev_rect_corners(b);

  std::vector<Vec2> subject(ca.begin(), ca.end());
  // Clip the subject against each CCW edge of b; inside = left of the edge.
  for (int e = 0; e < 4 && subject.size() >= 3; ++e) {
    const Vec2& p1 = cb[e];
    const Vec2& p2 = cb[(e + 1) % 4];
    std::vector<Vec2> out;
    out.reserve(subject.size() + 4);
    const std::size_t n = subject.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2& cur = subject[i];
      const Vec2& nxt = subject[(i + 1) % n];
      const double dc = cross(p1, p2, cur);
      const double dn = cross(p1, p2, nxt);
      if (dc >= 0.0) {
        out.push_back(cur);
      }
      if ((dc > 0.0 && dn < 0.0) || (dc < 0.0 && dn > 0.0)) {
        const double t = dc / (dc - dn);
        out.push_back({cur.x + t * (nxt.x - cur.x), cur.y + t * (nxt.y - cur.y)});
      }
    }
    subject = std::move(out);
  }

  if (subject.size() < 3) return 0.0;
  return std::max(0.0, shoelace_area(subject));
}

double bev_iou(const Box3D& a, const Box3D& b) {
  const double inter = rotated_rect_intersection_area(a, b);
  const double uni = a.l * a.w + b.l * b.w - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double box3d_iou(const Box3D& a, const Box3D& b) {
  const double bev_inter = rotated_rect_intersection_area(a, b);
  const double z_overlap =
      std::max(0.0, std::min(a.z + 0.5 * a.h, b.z + 0.5 * b.h) - std::max(a.z - 0.5 * a.h, b.z - 0.5 * b.h));
  const double inter = bev_inter * z_overlap;
  const double uni = a.volume() + b.volume() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace boxlift
