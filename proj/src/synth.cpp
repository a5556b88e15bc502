#include "boxlift/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace boxlift {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct FaceSpec {
  double nu, nv, nz;  // outward normal in the box frame
};
constexpr FaceSpec kFaces[5] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}};

// Surface samples on the faces of `box` visible from the sensor at the
// origin. Side faces start above the ground clearance band.
void sample_visible_faces(const Box3D& box, const SynthSceneSpec& spec, std::mt19937_64& rng,
                          PointCloud& out) {
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  std::uniform_real_distribution<double> unit(-0.5, 0.5);

  for (const FaceSpec& f : kFaces) {
    const double cu = f.nu * 0.5 * box.l;
    const double cv = f.nv * 0.5 * box.w;
    const double cz = f.nz * 0.5 * box.h;
    const double fx = box.x + box.yaw_cos * cu - box.yaw_sin * cv;
    const double fy = box.y + box.yaw_sin * cu + box.yaw_cos * cv;
    const double fz = box.z + cz;
    const double nx = box.yaw_cos * f.nu - box.yaw_sin * f.nv;
    const double ny = box.yaw_sin * f.nu + box.yaw_cos * f.nv;
    const double range = std::sqrt(fx * fx + fy * fy + fz * fz);
    const double cos_view = -(nx * fx + ny * fy + f.nz * fz) / range;
    if (cos_view <= 0.0) continue;

    const bool is_top = f.nz != 0;
    const double band = is_top ? 0.0 : std::min(spec.clearance, box.h);
    double area;
    if (is_top) {
      area = box.l * box.w;
    } else if (f.nu != 0) {
      area = box.w * (box.h - band);
    } else {
      area = box.l * (box.h - band);
    }
    if (area <= 0.0) continue;

    const double density = spec.face_density * std::max(cos_view, spec.grazing_floor);
    if (density < spec.min_surface_density) continue;

    // Jittered grid, like structured scan returns. A grid keeps every sampled
    // face one connected component under single-linkage clustering.
    double ext_a, ext_b;  // spans of the two in-face axes
    if (is_top) {
      ext_a = box.l;
      ext_b = box.w;
    } else {
      ext_a = f.nu != 0 ? box.w : box.l;
      ext_b = box.h - band;
    }
    const double spacing = 1.0 / std::sqrt(density);
    const int na = std::max(2, static_cast<int>(std::ceil(ext_a / spacing)));
    const int nb = std::max(2, static_cast<int>(std::ceil(ext_b / spacing)));
    for (int ia = 0; ia < na; ++ia) {
      for (int ib = 0; ib < nb; ++ib) {
        const double ta = (ia + 0.5 + 0.4 * unit(rng)) / na - 0.5;  // in [-0.5, 0.5]
        const double tb = (ib + 0.5 + 0.4 * unit(rng)) / nb - 0.5;
        double u, v, z;
        if (is_top) {
          u = ta * box.l;
          v = tb * box.w;
          z = cz;
        } else {
          const double z_lo = -0.5 * box.h + band;
          z = z_lo + (tb + 0.5) * (box.h - band);
          if (f.nu != 0) {
            u = cu;
            v = ta * box.w;
          } else {
            u = ta * box.l;
            v = cv;
          }
        }
        out.push_back({box.x + box.yaw_cos * u - box.yaw_sin * v + noise(rng),
                       box.y + box.yaw_sin * u + box.yaw_cos * v + noise(rng),
                       box.z + z + noise(rng)});
      }
    }
  }
}

}  // namespace

Eigen::Matrix4d kitti_like_cloud_to_cam() {
  Eigen::Matrix4d t = Eigen::Matrix4d::Zero();
  t(0, 1) = -1.0;
  t(1, 2) = -1.0;
  t(2, 0) = 1.0;
  t(3, 3) = 1.0;
  return t;
}

SynthScene generate_synth_scene(const SynthSceneSpec& spec, std::uint64_t scene_seed) {
  if (spec.classes.empty()) throw ConfigError("synth spec has no classes");
  if (spec.objects_min < 1 || spec.objects_max < spec.objects_min) {
    throw ConfigError("synth object count range is invalid");
  }

  std::mt19937_64 rng(mix_seed(spec.seed, scene_seed));
  std::uniform_real_distribution<double> unit01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SynthScene out;
  out.scene.calib =
      CameraCalibration::pinhole(spec.focal, spec.focal, spec.cx, spec.cy, kitti_like_cloud_to_cam());
  out.scene.image_width = spec.image_width;
  out.scene.image_height = spec.image_height;

  const int target = spec.objects_min +
                     static_cast<int>(std::uniform_int_distribution<int>(
                         0, spec.objects_max - spec.objects_min)(rng));

  // Place ground-truth boxes by rejection: BEV-disjoint, fully projectable if
  // required, and (so each frustum holds a single object) with non-overlapping
  // projected rectangles.
  std::vector<Rect2D> corner_rects;
  for (int obj = 0; obj < target; ++obj) {
    bool placed = false;
    for (int attempt = 0; attempt < spec.max_placement_attempts && !placed; ++attempt) {
      const SynthClassSpec& cls =
          spec.classes[std::uniform_int_distribution<std::size_t>(0, spec.classes.size() - 1)(rng)];
      const double l = std::max(0.5, cls.length_mean + cls.length_sigma * gauss(rng));
      const double w = l / cls.bev_ratio;
      const double h = std::max(0.3, cls.height_mean + cls.height_sigma * gauss(rng));
      double yaw = spec.yaw_min + (spec.yaw_max - spec.yaw_min) * unit01(rng);
      const double x = spec.place_x_min + (spec.place_x_max - spec.place_x_min) * unit01(rng);
      const double y = -spec.place_y_half + 2.0 * spec.place_y_half * unit01(rng);
      const bool snap = unit01(rng) < spec.axis_align_prob;
      const int snap_quarter = std::uniform_int_distribution<int>(0, 3)(rng);
      const double snap_jitter = spec.axis_align_jitter * gauss(rng);
      if (snap) {
        yaw = std::atan2(y, x) + snap_quarter * M_PI_2 + snap_jitter;
      }
      const Box3D box(x, y, spec.ground_z + 0.5 * h, l, w, h, yaw);

      bool ok = true;
      for (const LabeledBox& other : out.gt_boxes) {
        if (rotated_rect_intersection_area(box, other.box) > 0.0) {
          ok = false;
          break;
        }
      }

      Rect2D rect{};
      if (ok) {
        std::vector<Vec2> px;
        Vec2 p;
        for (const Point3& corner : box_corners(box)) {
          if (out.scene.calib.project_if_visible(corner, p)) px.push_back(p);
        }
        if (px.size() < 8) {
          ok = spec.require_fully_visible ? false : px.size() >= 3;
        }
        if (ok) {
          rect = min_bounding_rect(px);
          if (spec.require_fully_visible) {
            const double m = spec.visibility_margin_px;
            ok = rect.x_min >= m && rect.y_min >= m && rect.x_max <= spec.image_width - m &&
                 rect.y_max <= spec.image_height - m;
          }
        }
      }
      if (ok && spec.require_disjoint_rects) {
        const double m = spec.visibility_margin_px;
        for (const Rect2D& other : corner_rects) {
          const bool separated = rect.x_max + m < other.x_min || other.x_max + m < rect.x_min ||
                                 rect.y_max + m < other.y_min || other.y_max + m < rect.y_min;
          if (!separated) {
            ok = false;
            break;
          }
        }
      }
      if (ok) {
        out.gt_boxes.push_back({cls.name, box});
        corner_rects.push_back(rect);
        placed = true;
      }
    }
    if (!placed) {
      // Crowded configurations may not admit the drawn count; settle for
      // fewer once the minimum is met.
      if (obj >= spec.objects_min) break;
      throw PlacementFailure("could not place object " + std::to_string(obj) + " after " +
                             std::to_string(spec.max_placement_attempts) + " attempts");
    }
  }

  // Ground plane points.
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  const double ground_area =
      (spec.ground_x_max - spec.ground_x_min) * 2.0 * spec.ground_y_half;
  const int ground_count = static_cast<int>(ground_area * spec.ground_density);
  for (int i = 0; i < ground_count; ++i) {
    const double x = spec.ground_x_min + (spec.ground_x_max - spec.ground_x_min) * unit01(rng);
    const double y = -spec.ground_y_half + 2.0 * spec.ground_y_half * unit01(rng);
    out.scene.cloud.push_back({x, y, spec.ground_z + noise(rng)});
    out.point_owner.push_back(-1);
  }

  // Object surfaces and their 2D boxes.
  for (std::size_t g = 0; g < out.gt_boxes.size(); ++g) {
    PointCloud pts;
    sample_visible_faces(out.gt_boxes[g].box, spec, rng, pts);

    std::vector<Vec2> px;
    px.reserve(pts.size());
    Vec2 p;
    for (const Point3& q : pts) {
      if (out.scene.calib.project_if_visible(q, p)) px.push_back(p);
    }
    if (px.size() < 3) {
      throw PlacementFailure("object " + std::to_string(g) + " produced too few visible points");
    }
    Rect2D raw =
        spec.rect_source == RectSource::corners ? corner_rects[g] : min_bounding_rect(px);
    if (spec.rect_noise_px > 0.0) {
      std::normal_distribution<double> px_noise(0.0, spec.rect_noise_px);
      raw.x_min += px_noise(rng);
      raw.y_min += px_noise(rng);
      raw.x_max += px_noise(rng);
      raw.y_max += px_noise(rng);
      if (raw.x_min > raw.x_max) std::swap(raw.x_min, raw.x_max);
      if (raw.y_min > raw.y_max) std::swap(raw.y_min, raw.y_max);
    }
    out.scene.boxes2d.push_back(
        {out.gt_boxes[g].class_label, raw.clamped(spec.image_width, spec.image_height), raw});

    for (const Point3& q : pts) {
      out.scene.cloud.push_back(q);
      out.point_owner.push_back(static_cast<int>(g));
    }
  }

  return out;
}

SynthSceneSpec make_synth_spec(const ConfigMap& cfg) {
  SynthSceneSpec spec;
  spec.objects_min = cfg.get_int("synth.objects_min", spec.objects_min);
  spec.objects_max = cfg.get_int("synth.objects_max", spec.objects_max);
  spec.yaw_min = cfg.get_double("synth.yaw_min", spec.yaw_min);
  spec.yaw_max = cfg.get_double("synth.yaw_max", spec.yaw_max);
  spec.axis_align_prob = cfg.get_double("synth.axis_align_prob", spec.axis_align_prob);
  spec.axis_align_jitter = cfg.get_double("synth.axis_align_jitter", spec.axis_align_jitter);
  spec.face_density = cfg.get_double("synth.face_density", spec.face_density);
  spec.grazing_floor = cfg.get_double("synth.grazing_floor", spec.grazing_floor);
  spec.min_surface_density = cfg.get_double("synth.min_surface_density", spec.min_surface_density);
  const std::string rect_source = cfg.get_string("synth.rect_source", "corners");
  if (rect_source == "corners") {
    spec.rect_source = RectSource::corners;
  } else if (rect_source == "points") {
    spec.rect_source = RectSource::points;
  } else {
    throw ConfigError("synth.rect_source must be 'corners' or 'points', got '" + rect_source + "'");
  }
  spec.rect_noise_px = cfg.get_double("synth.rect_noise_px", spec.rect_noise_px);
  spec.noise_sigma = cfg.get_double("synth.noise_sigma", spec.noise_sigma);
  spec.clearance = cfg.get_double("synth.clearance", spec.clearance);
  spec.focal = cfg.get_double("synth.focal", spec.focal);
  spec.cx = cfg.get_double("synth.cx", spec.cx);
  spec.cy = cfg.get_double("synth.cy", spec.cy);
  spec.image_width = cfg.get_int("scene.image_width", spec.image_width);
  spec.image_height = cfg.get_int("scene.image_height", spec.image_height);
  spec.ground_z = cfg.get_double("synth.ground_z", spec.ground_z);
  spec.ground_density = cfg.get_double("synth.ground_density", spec.ground_density);
  spec.ground_x_min = cfg.get_double("synth.ground_x_min", spec.ground_x_min);
  spec.ground_x_max = cfg.get_double("synth.ground_x_max", spec.ground_x_max);
  spec.ground_y_half = cfg.get_double("synth.ground_y_half", spec.ground_y_half);
  spec.place_x_min = cfg.get_double("synth.place_x_min", spec.place_x_min);
  spec.place_x_max = cfg.get_double("synth.place_x_max", spec.place_x_max);
  spec.place_y_half = cfg.get_double("synth.place_y_half", spec.place_y_half);
  spec.require_fully_visible = cfg.get_bool("synth.require_fully_visible", spec.require_fully_visible);
  spec.require_disjoint_rects = cfg.get_bool("synth.require_disjoint_rects", spec.require_disjoint_rects);
  spec.visibility_margin_px = cfg.get_double("synth.visibility_margin_px", spec.visibility_margin_px);
  spec.max_placement_attempts = cfg.get_int("synth.max_placement_attempts", spec.max_placement_attempts);
  spec.seed = cfg.get_u64("synth.seed", spec.seed);

  const std::string class_list = cfg.get_string("synth.classes", "Car");
  spec.classes.clear();
  std::istringstream in(class_list);
  std::string name;
  while (std::getline(in, name, ',')) {
    const auto b = name.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    const auto e = name.find_last_not_of(" \t");
    name = name.substr(b, e - b + 1);
    SynthClassSpec cls;
    cls.name = name;
    const std::string prefix = "synth.class." + name + ".";
    cls.length_mean = cfg.get_double(prefix + "length_mean", cls.length_mean);
    cls.length_sigma = cfg.get_double(prefix + "length_sigma", cls.length_sigma);
    cls.bev_ratio = cfg.get_double(prefix + "ratio", cls.bev_ratio);
    cls.height_mean = cfg.get_double(prefix + "height_mean", cls.height_mean);
    cls.height_sigma = cfg.get_double(prefix + "height_sigma", cls.height_sigma);
    if (cls.bev_ratio < 1.0) throw ConfigError("synth class ratio must be >= 1");
    spec.classes.push_back(cls);
  }
  if (spec.classes.empty()) throw ConfigError("synth.classes is empty");
  return spec;
}

}  // namespace boxlift
