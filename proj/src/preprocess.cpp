#include "boxlift/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <unordered_map>

#include <Eigen/Dense>

namespace boxlift {

namespace {

// splitmix64-style stream derivation so pipeline stages get independent seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double sq_dist(const Point3& a, const Point3& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  const double dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

Plane plane_through(const Point3& a, const Point3& b, const Point3& c) {
  const Eigen::Vector3d u(b.x - a.x, b.y - a.y, b.z - a.z);
  const Eigen::Vector3d v(c.x - a.x, c.y - a.y, c.z - a.z);
  Eigen::Vector3d n = u.cross(v);
  const double norm = n.norm();
  if (norm < 1e-12) return Plane{{0, 0, 0}, 0.0};
  n /= norm;
  if (n.z() < 0.0) n = -n;
  Plane p;
  p.normal = {n.x(), n.y(), n.z()};
  p.offset = -(n.x() * a.x + n.y() * a.y + n.z() * a.z);
  return p;
}

Plane least_squares_plane(const PointCloud& cloud, const std::vector<std::uint32_t>& idx) {
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (std::uint32_t i : idx) centroid += Eigen::Vector3d(cloud[i].x, cloud[i].y, cloud[i].z);
  centroid /= static_cast<double>(idx.size());

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (std::uint32_t i : idx) {
    const Eigen::Vector3d d = Eigen::Vector3d(cloud[i].x, cloud[i].y, cloud[i].z) - centroid;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  Eigen::Vector3d n = es.eigenvectors().col(0);  // smallest eigenvalue
  if (n.z() < 0.0) n = -n;
  Plane p;
  p.normal = {n.x(), n.y(), n.z()};
  p.offset = -n.dot(centroid);
  return p;
}

// Spatial hash with cell size = radius for single-linkage neighbor queries.
struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& k) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::int64_t v : {k.x, k.y, k.z}) {
      h ^= static_cast<std::uint64_t>(v);
      h *= 1099511628211ULL;
    }
    return static_cast<std::size_t>(h);
  }
};

}  // namespace

const char* to_string(SkipReason reason) {
  switch (reason) {
    case SkipReason::EmptyFrustum:
      return "EmptyFrustum";
    case SkipReason::NoClusterAboveMinimum:
      return "NoClusterAboveMinimum";
    case SkipReason::NonPositiveDepth:
      return "NonPositiveDepth";
  }
  return "Unknown";
}

PrepConfig PrepConfig::defaults_for(SceneMode mode) {
  PrepConfig c;
  c.mode = mode;
  if (mode == SceneMode::indoor) {
    c.ransac_threshold = 0.04;
    c.cluster_radius = 0.1;
  } else {
    c.ransac_threshold = 0.2;
    c.cluster_radius = 0.5;
  }
  return c;
}

PointCloud farthest_point_sampling(const PointCloud& cloud, std::size_t target_count,
                                   std::uint64_t seed) {
  if (cloud.empty()) throw EmptyCloud("farthest_point_sampling: empty cloud");
  if (target_count == 0) throw EmptyInput("farthest_point_sampling: target_count must be >= 1");
  if (cloud.size() <= target_count) return cloud;

  std::mt19937_64 rng(seed);
  const std::size_t n = cloud.size();
  std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
  std::vector<std::uint32_t> selected;
  selected.reserve(target_count);

  std::size_t current = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  selected.push_back(static_cast<std::uint32_t>(current));

  while (selected.size() < target_count) {
    double best = -1.0;
    std::size_t best_idx = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = sq_dist(cloud[i], cloud[current]);
      if (d < min_dist[i]) min_dist[i] = d;
      if (min_dist[i] > best) {
        best = min_dist[i];
        best_idx = i;
      }
    }
    current = best_idx;
    selected.push_back(static_cast<std::uint32_t>(current));
  }

  PointCloud out;
  out.reserve(selected.size());
  for (std::uint32_t i : selected) out.push_back(cloud[i]);
  return out;
}

GroundRemovalResult ransac_ground_removal(const PointCloud& cloud, double inlier_threshold,
                                          int iterations, std::uint64_t seed,
                                          double max_tilt_deg) {
  if (cloud.size() < 3) throw TooFewPoints("ransac_ground_removal: need at least 3 points");
  if (inlier_threshold <= 0.0) throw EmptyInput("ransac_ground_removal: threshold must be > 0");

  const double min_nz = max_tilt_deg >= 90.0 ? -1.0 : std::cos(max_tilt_deg * M_PI / 180.0);

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, cloud.size() - 1);

  std::size_t best_count = 0;
  Plane best_plane;
  bool found = false;

  for (int it = 0; it < iterations; ++it) {
    const std::size_t i = pick(rng);
    const std::size_t j = pick(rng);
    const std::size_t k = pick(rng);
    if (i == j || j == k || i == k) continue;
    const Plane hyp = plane_through(cloud[i], cloud[j], cloud[k]);
    if (hyp.normal.x == 0.0 && hyp.normal.y == 0.0 && hyp.normal.z == 0.0) continue;
    if (hyp.normal.z < min_nz) continue;

    std::size_t count = 0;
    for (const Point3& p : cloud) {
      if (hyp.distance(p) <= inlier_threshold) ++count;
    }
    if (count > best_count) {
      best_count = count;
      best_plane = hyp;
      found = true;
    }
  }

  GroundRemovalResult result;
  if (!found || best_count < 3) {
    result.non_ground = cloud;
    result.ground_found = false;
    return result;
  }

  std::vector<std::uint32_t> inliers;
  inliers.reserve(best_count);
  for (std::uint32_t i = 0; i < cloud.size(); ++i) {
    if (best_plane.distance(cloud[i]) <= inlier_threshold) inliers.push_back(i);
  }
  Plane refined = least_squares_plane(cloud, inliers);
  if (refined.normal.z < min_nz) refined = best_plane;

  result.plane = refined;
  result.ground_found = true;
  for (const Point3& p : cloud) {
    if (refined.distance(p) > inlier_threshold) result.non_ground.push_back(p);
  }
  return result;
}

PointCloud frustum_select(const PointCloud& cloud, const Rect2D& rect,
                          const CameraCalibration& calib) {
  PointCloud out;
  Vec2 px;
  for (const Point3& p : cloud) {
    if (calib.project_if_visible(p, px) && rect.contains(px)) out.push_back(p);
  }
  return out;
}

PointCloud largest_cluster_denoise(const PointCloud& points, double radius,
                                   std::size_t min_cluster) {
  if (points.empty()) throw EmptyCloud("largest_cluster_denoise: empty input");
  if (radius <= 0.0) throw EmptyInput("largest_cluster_denoise: radius must be > 0");

  const std::size_t n = points.size();
  std::unordered_map<CellKey, std::vector<std::uint32_t>, CellKeyHash> grid;
  grid.reserve(n);
  auto cell_of = [radius](const Point3& p) {
    return CellKey{static_cast<std::int64_t>(std::floor(p.x / radius)),
                   static_cast<std::int64_t>(std::floor(p.y / radius)),
                   static_cast<std::int64_t>(std::floor(p.z / radius))};
  };
  for (std::uint32_t i = 0; i < n; ++i) grid[cell_of(points[i])].push_back(i);

  const double r2 = radius * radius;
  std::vector<std::int32_t> label(n, -1);
  std::int32_t num_clusters = 0;
  std::vector<std::uint32_t> stack;

  for (std::uint32_t s = 0; s < n; ++s) {
    if (label[s] != -1) continue;
    const std::int32_t cluster = num_clusters++;
    label[s] = cluster;
    stack.assign(1, s);
    while (!stack.empty()) {
      const std::uint32_t cur = stack.back();
      stack.pop_back();
      const CellKey c = cell_of(points[cur]);
      for (std::int64_t dx = -1; dx <= 1; ++dx) {
        for (std::int64_t dy = -1; dy <= 1; ++dy) {
          for (std::int64_t dz = -1; dz <= 1; ++dz) {
            const auto it = grid.find(CellKey{c.x + dx, c.y + dy, c.z + dz});
            if (it == grid.end()) continue;
            for (std::uint32_t other : it->second) {
              if (label[other] == -1 && sq_dist(points[cur], points[other]) <= r2) {
                label[other] = cluster;
                stack.push_back(other);
              }
            }
          }
        }
      }
    }
  }

  std::vector<std::size_t> cluster_size(num_clusters, 0);
  std::vector<double> cluster_range_sum(num_clusters, 0.0);
  for (std::uint32_t i = 0; i < n; ++i) {
    cluster_size[label[i]]++;
    cluster_range_sum[label[i]] +=
        std::sqrt(points[i].x * points[i].x + points[i].y * points[i].y + points[i].z * points[i].z);
  }

  std::int32_t best = -1;
  for (std::int32_t c = 0; c < num_clusters; ++c) {
    if (best == -1) {
      best = c;
      continue;
    }
    if (cluster_size[c] > cluster_size[best]) {
      best = c;
    } else if (cluster_size[c] == cluster_size[best]) {
      const double mean_c = cluster_range_sum[c] / cluster_size[c];
      const double mean_b = cluster_range_sum[best] / cluster_size[best];
      if (mean_c < mean_b) best = c;
    }
  }

  if (cluster_size[best] < min_cluster) {
    throw NoClusterAboveMinimum("largest cluster has " + std::to_string(cluster_size[best]) +
                                " points, minimum is " + std::to_string(min_cluster));
  }

  PointCloud out;
  out.reserve(cluster_size[best]);
  for (std::uint32_t i = 0; i < n; ++i) {
    if (label[i] == best) out.push_back(points[i]);
  }
  return out;
}

InitialBox initial_pseudo_box(const PointCloud& points) {
  if (points.empty()) throw EmptyCloud("initial_pseudo_box: empty input");

  double z_min = points[0].z, z_max = points[0].z;
  std::vector<Vec2> bev;
  bev.reserve(points.size());
  for (const Point3& p : points) {
    z_min = std::min(z_min, p.z);
    z_max = std::max(z_max, p.z);
    bev.push_back({p.x, p.y});
  }
  const double h = std::max(z_max - z_min, 1e-6);
  const double cz = 0.5 * (z_min + z_max);

  try {
    const auto rect = min_perimeter_rect_bev(convex_hull_2d(bev));
    InitialBox out;
    out.box = Box3D(rect.center.x, rect.center.y, cz, rect.l, rect.w, h, rect.yaw);
    return out;
  } catch (const DegenerateInput&) {
    double x_min = bev[0].x, x_max = bev[0].x, y_min = bev[0].y, y_max = bev[0].y;
    for (const Vec2& p : bev) {
      x_min = std::min(x_min, p.x);
      x_max = std::max(x_max, p.x);
      y_min = std::min(y_min, p.y);
      y_max = std::max(y_max, p.y);
    }
    const double ex = std::max(x_max - x_min, 1e-6);
    const double ey = std::max(y_max - y_min, 1e-6);
    InitialBox out;
    out.degenerate = true;
    if (ex >= ey) {
      out.box = Box3D(0.5 * (x_min + x_max), 0.5 * (y_min + y_max), cz, ex, ey, h, 0.0);
    } else {
      out.box = Box3D(0.5 * (x_min + x_max), 0.5 * (y_min + y_max), cz, ey, ex, h, M_PI_2);
    }
    return out;
  }
}

Rect2D pseudo_union_rect(const Box3D& initial_box, const Rect2D& rect2d,
                         const CameraCalibration& calib, int image_width, int image_height) {
  const auto corners = box_corners(initial_box);
  const auto px = project_points(corners, calib);
  const Rect2D pseudo = min_bounding_rect(px);
  return Rect2D::union_of(pseudo, rect2d).clamped(image_width, image_height);
}

PrepareResult prepare_scene(const Scene& scene, const PrepConfig& config) {
  PrepareResult result;

  PointCloud working = scene.cloud;
  if (config.mode == SceneMode::indoor && config.fps_target > 0) {
    working = farthest_point_sampling(working, config.fps_target, mix_seed(config.seed, 1));
  }

  PointCloud non_ground;
  if (working.size() >= 3) {
    auto ground = ransac_ground_removal(working, config.ransac_threshold,
                                        config.ransac_iterations, mix_seed(config.seed, 2),
                                        config.ransac_max_tilt_deg);
    result.ground_plane = ground.plane;
    result.ground_found = ground.ground_found;
    non_ground = std::move(ground.non_ground);
  } else {
    non_ground = working;
  }

  for (std::size_t i = 0; i < scene.boxes2d.size(); ++i) {
    const SceneBox2D& annotated = scene.boxes2d[i];

    const PointCloud frustum = frustum_select(non_ground, annotated.rect, scene.calib);
    if (frustum.empty()) {
      result.skipped.push_back({i, SkipReason::EmptyFrustum});
      continue;
    }

    PointCloud in_box;
    try {
      in_box = largest_cluster_denoise(frustum, config.cluster_radius, config.min_cluster);
    } catch (const NoClusterAboveMinimum&) {
      result.skipped.push_back({i, SkipReason::NoClusterAboveMinimum});
      continue;
    }

    const InitialBox initial = initial_pseudo_box(in_box);

    ObjectSample sample;
    sample.class_label = annotated.class_label;
    sample.source_index = i;
    sample.rect2d = annotated.rect;
    sample.in_box_points = std::move(in_box);
    sample.initial_box = initial.box;
    sample.degenerate_initial_box = initial.degenerate;

    if (config.mode == SceneMode::indoor) {
      try {
        sample.constraint_rect = pseudo_union_rect(initial.box, annotated.rect, scene.calib,
                                                   scene.image_width, scene.image_height);
      } catch (const NonPositiveDepth&) {
        result.skipped.push_back({i, SkipReason::NonPositiveDepth});
        continue;
      }
    } else {
      sample.constraint_rect = annotated.rect;
    }

    result.samples.push_back(std::move(sample));
  }

  return result;
}

}  // namespace boxlift
