#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "boxlift/preprocess.hpp"
#include "oracles.hpp"

using namespace boxlift;

namespace {

double min_pairwise_distance(const PointCloud& pts) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      const double dx = pts[i].x - pts[j].x;
      const double dy = pts[i].y - pts[j].y;
      const double dz = pts[i].z - pts[j].z;
      best = std::min(best, std::sqrt(dx * dx + dy * dy + dz * dz));
    }
  }
  return best;
}

PointCloud grid_plane(double z, double x0, double x1, double y0, double y1, double step) {
  PointCloud out;
  for (double x = x0; x <= x1; x += step) {
    for (double y = y0; y <= y1; y += step) {
      out.push_back({x, y, z});
    }
  }
  return out;
}

// Points on the vertical faces of a box, dense enough to cluster tightly.
PointCloud box_shell(const Box3D& box, double step) {
  PointCloud out;
  const double c = box.yaw_cos, s = box.yaw_sin;
  auto emit = [&](double u, double v, double z) {
    out.push_back({box.x + c * u - s * v, box.y + s * u + c * v, box.z + z});
  };
  for (double z = -0.5 * box.h; z <= 0.5 * box.h + 1e-12; z += step) {
    for (double u = -0.5 * box.l; u <= 0.5 * box.l + 1e-12; u += step) {
      emit(u, -0.5 * box.w, z);
      emit(u, +0.5 * box.w, z);
    }
    for (double v = -0.5 * box.w; v <= 0.5 * box.w + 1e-12; v += step) {
      emit(-0.5 * box.l, v, z);
      emit(+0.5 * box.l, v, z);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("farthest_point_sampling: undersized input passes through") {
  PointCloud cloud{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}, {4, 0, 0}};
  const auto out = farthest_point_sampling(cloud, 10, 42);
  REQUIRE(out.size() == 5);
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out[i].x == cloud[i].x);
  }
  CHECK_THROWS_AS(farthest_point_sampling(PointCloud{}, 3, 0), EmptyCloud);
}

TEST_CASE("farthest_point_sampling: max-min separation picks one point per far cluster") {
  for (std::uint64_t seed : {0ULL, 1ULL, 77ULL, 123456ULL}) {
    PointCloud cloud;
    oracle::Rng rng(seed + 5000);
    for (int i = 0; i < 30; ++i) {
      cloud.push_back({oracle::urand(rng, -1, 1), oracle::urand(rng, -1, 1), 0.0});
    }
    for (int i = 0; i < 30; ++i) {
      cloud.push_back({100.0 + oracle::urand(rng, -1, 1), oracle::urand(rng, -1, 1), 0.0});
    }
    const auto out = farthest_point_sampling(cloud, 2, seed);
    REQUIRE(out.size() == 2);
    CHECK(std::abs(out[0].x - out[1].x) > 90.0);
  }
}

TEST_CASE("farthest_point_sampling: greedy spread dominates random subsets") {
  oracle::Rng rng(5001);
  PointCloud cloud;
  for (int i = 0; i < 200; ++i) {
    cloud.push_back({oracle::urand(rng, -10, 10), oracle::urand(rng, -10, 10),
                     oracle::urand(rng, -2, 2)});
  }
  const auto greedy = farthest_point_sampling(cloud, 50, 9);
  const double greedy_sep = min_pairwise_distance(greedy);

  for (int rep = 0; rep < 1000; ++rep) {
    PointCloud subset = cloud;
    std::shuffle(subset.begin(), subset.end(), rng);
    subset.resize(50);
    CHECK(greedy_sep >= min_pairwise_distance(subset));
  }
}

TEST_CASE("ransac_ground_removal: exact plane keeps only the elevated points") {
  PointCloud cloud = grid_plane(0.0, -10, 10, -10, 10, 1.0);
  const std::size_t plane_count = cloud.size();
  for (int i = 0; i < 10; ++i) cloud.push_back({static_cast<double>(i), 0.0, 2.0});

  const auto res = ransac_ground_removal(cloud, 0.2, 200, 3);
  REQUIRE(res.ground_found);
  CHECK(res.non_ground.size() == 10);
  for (const Point3& p : res.non_ground) CHECK(p.z == doctest::Approx(2.0));
  CHECK(std::abs(res.plane.normal.z) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(plane_count + 10 == cloud.size());
}

TEST_CASE("ransac_ground_removal: a single plane leaves nothing behind") {
  const PointCloud cloud = grid_plane(2.0, -5, 5, -5, 5, 0.7);
  const auto res = ransac_ground_removal(cloud, 0.2, 200, 11);
  REQUIRE(res.ground_found);
  CHECK(res.non_ground.empty());
}

TEST_CASE("ransac_ground_removal: recovers a noisy plane among structured outliers") {
  oracle::Rng rng(5002);
  for (double threshold : {0.04, 0.2}) {
    PointCloud cloud;
    std::normal_distribution<double> noise(0.0, 0.01);
    // Slightly tilted ground, 80% of points.
    const Eigen::Vector3d true_n = Eigen::Vector3d(0.05, -0.03, 1.0).normalized();
    for (int i = 0; i < 800; ++i) {
      const double x = oracle::urand(rng, -10, 10);
      const double y = oracle::urand(rng, -10, 10);
      const double z = (-true_n.x() * x - true_n.y() * y) / true_n.z() + noise(rng);
      cloud.push_back({x, y, z});
    }
    // Structured outliers: a wall patch and a blob.
    for (int i = 0; i < 120; ++i) {
      cloud.push_back({5.0 + noise(rng), oracle::urand(rng, -3, 3), oracle::urand(rng, 0.1, 2.0)});
    }
    for (int i = 0; i < 80; ++i) {
      cloud.push_back({oracle::urand(rng, -1, 1), 7.0 + oracle::urand(rng, -1, 1),
                       oracle::urand(rng, 0.5, 1.5)});
    }

    const auto res = ransac_ground_removal(cloud, threshold, 200, 17);
    REQUIRE(res.ground_found);
    const Eigen::Vector3d got(res.plane.normal.x, res.plane.normal.y, res.plane.normal.z);
    const double angle = std::acos(std::clamp(std::abs(got.dot(true_n)), -1.0, 1.0));
    CHECK(angle <= 2.0 * M_PI / 180.0);
    CHECK(res.non_ground.size() <= cloud.size());
  }
}

TEST_CASE("ransac_ground_removal: verticality gate rejects walls") {
  oracle::Rng rng(5003);
  PointCloud cloud;
  // Dominant vertical wall (x = 3), smaller horizontal ground patch.
  for (int i = 0; i < 500; ++i) {
    cloud.push_back({3.0, oracle::urand(rng, -5, 5), oracle::urand(rng, 0, 4)});
  }
  for (int i = 0; i < 200; ++i) {
    cloud.push_back({oracle::urand(rng, -5, 5), oracle::urand(rng, -5, 5), 0.0});
  }

  const auto gated = ransac_ground_removal(cloud, 0.05, 300, 23, 30.0);
  REQUIRE(gated.ground_found);
  CHECK(std::abs(gated.plane.normal.z) > 0.99);  // picked the ground

  const auto plain = ransac_ground_removal(cloud, 0.05, 300, 23, 180.0);
  REQUIRE(plain.ground_found);
  CHECK(std::abs(plain.plane.normal.z) < 0.1);  // picked the wall
}

TEST_CASE("frustum_select: depth gate and inclusive containment") {
  const auto calib = CameraCalibration::pinhole(1000, 1000, 600, 200);
  const Rect2D rect{500, 150, 700, 250};

  // Projects to the rect center.
  PointCloud cloud{{0, 0, 10}};
  CHECK(frustum_select(cloud, rect, calib).size() == 1);

  // Behind the camera: excluded regardless of numeric projection.
  cloud = {{0, 0, -10}};
  CHECK(frustum_select(cloud, rect, calib).empty());

  // On the boundary: included.
  cloud = {{-1, -0.5, 10}};  // pixel (500, 150)
  CHECK(frustum_select(cloud, rect, calib).size() == 1);
}

TEST_CASE("frustum_select: matches per-point scan oracle and is idempotent") {
  oracle::Rng rng(5004);
  for (int it = 0; it < 20; ++it) {
    const auto calib = oracle::random_calibration(rng);
    PointCloud cloud;
    for (int i = 0; i < 300; ++i) {
      cloud.push_back({oracle::urand(rng, -20, 40), oracle::urand(rng, -15, 15),
                       oracle::urand(rng, -3, 3)});
    }
    const Rect2D rect{oracle::urand(rng, 200, 500), oracle::urand(rng, 50, 150),
                      oracle::urand(rng, 600, 1000), oracle::urand(rng, 200, 350)};

    const auto got = frustum_select(cloud, rect, calib);

    PointCloud want;
    for (const Point3& p : cloud) {
      const Eigen::Vector3d q = calib.projection() * Eigen::Vector4d(p.x, p.y, p.z, 1.0);
      if (q.z() <= CameraCalibration::kMinDepth) continue;
      const double u = q.x() / q.z();
      const double v = q.y() / q.z();
      if (u >= rect.x_min && u <= rect.x_max && v >= rect.y_min && v <= rect.y_max) {
        want.push_back(p);
      }
    }
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].x == want[i].x);
      CHECK(got[i].y == want[i].y);
      CHECK(got[i].z == want[i].z);
    }

    const auto again = frustum_select(got, rect, calib);
    CHECK(again.size() == got.size());
  }
}

TEST_CASE("largest_cluster_denoise: single cluster returned whole") {
  oracle::Rng rng(5005);
  PointCloud cloud;
  for (int i = 0; i < 50; ++i) {
    cloud.push_back({oracle::urand(rng, -0.5, 0.5), oracle::urand(rng, -0.5, 0.5),
                     oracle::urand(rng, -0.5, 0.5)});
  }
  CHECK(largest_cluster_denoise(cloud, 2.0, 1).size() == 50);
}

TEST_CASE("largest_cluster_denoise: size dominance and minimum gate") {
  oracle::Rng rng(5006);
  PointCloud cloud;
  for (int i = 0; i < 50; ++i) {
    cloud.push_back({10.0 + oracle::urand(rng, -0.2, 0.2), oracle::urand(rng, -0.2, 0.2),
                     oracle::urand(rng, -0.2, 0.2)});
  }
  for (int i = 0; i < 5; ++i) {
    cloud.push_back({30.0 + oracle::urand(rng, -0.2, 0.2), oracle::urand(rng, -0.2, 0.2),
                     oracle::urand(rng, -0.2, 0.2)});
  }
  const auto out = largest_cluster_denoise(cloud, 0.5, 1);
  REQUIRE(out.size() == 50);
  for (const Point3& p : out) CHECK(p.x < 20.0);

  CHECK_THROWS_AS(largest_cluster_denoise(cloud, 0.5, 60), NoClusterAboveMinimum);
  CHECK_THROWS_AS(largest_cluster_denoise(PointCloud{}, 0.5, 1), EmptyCloud);
}

TEST_CASE("largest_cluster_denoise: tie broken by smaller mean depth") {
  PointCloud cloud;
  for (int i = 0; i < 10; ++i) cloud.push_back({30.0 + 0.01 * i, 0, 0});
  for (int i = 0; i < 10; ++i) cloud.push_back({10.0 + 0.01 * i, 0, 0});
  const auto out = largest_cluster_denoise(cloud, 0.5, 1);
  REQUIRE(out.size() == 10);
  for (const Point3& p : out) CHECK(p.x < 20.0);
}

TEST_CASE("largest_cluster_denoise: matches union-find oracle") {
  oracle::Rng rng(5007);
  for (int it = 0; it < 25; ++it) {
    PointCloud cloud;
    const int n1 = 20 + static_cast<int>(oracle::urand(rng, 0, 40));
    const int n2 = 5 + static_cast<int>(oracle::urand(rng, 0, 30));
    for (int i = 0; i < n1; ++i) {
      cloud.push_back({oracle::urand(rng, -1, 1), oracle::urand(rng, -1, 1),
                       oracle::urand(rng, -1, 1)});
    }
    for (int i = 0; i < n2; ++i) {
      cloud.push_back({8.0 + oracle::urand(rng, -1, 1), oracle::urand(rng, -1, 1),
                       oracle::urand(rng, -1, 1)});
    }
    const double radius = 1.2;

    const auto labels = oracle::union_find_clusters(cloud, radius);
    std::vector<std::size_t> sizes(1 + *std::max_element(labels.begin(), labels.end()), 0);
    for (int l : labels) sizes[l]++;
    const std::size_t biggest = *std::max_element(sizes.begin(), sizes.end());

    const auto got = largest_cluster_denoise(cloud, radius, 1);
    CHECK(got.size() == biggest);
  }
}

TEST_CASE("initial_pseudo_box: exact shell and rotational equivariance") {
  const Box3D truth(2, -1, 0.75, 4, 2, 1.5, 0.0);
  const auto shell = box_shell(truth, 0.25);
  const auto init = initial_pseudo_box(shell);
  CHECK_FALSE(init.degenerate);
  CHECK(init.box.l == doctest::Approx(4.0).epsilon(1e-9));
  CHECK(init.box.w == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(init.box.h == doctest::Approx(1.5).epsilon(1e-9));
  CHECK(std::abs(init.box.yaw()) < 1e-9);
  CHECK(init.box.x == doctest::Approx(2.0));
  CHECK(init.box.y == doctest::Approx(-1.0));
  CHECK(init.box.z == doctest::Approx(0.75));

  const Box3D tilted(2, -1, 0.75, 4, 2, 1.5, 0.3);
  const auto init_t = initial_pseudo_box(box_shell(tilted, 0.25));
  CHECK(init_t.box.l == doctest::Approx(4.0).epsilon(1e-9));
  CHECK(init_t.box.w == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(init_t.box.yaw() == doctest::Approx(0.3).epsilon(1e-9));
}

TEST_CASE("initial_pseudo_box: contains every point, perimeter near the sweep optimum") {
  oracle::Rng rng(5008);
  for (int it = 0; it < 30; ++it) {
    PointCloud cloud;
    const int n = 10 + static_cast<int>(oracle::urand(rng, 0, 100));
    for (int i = 0; i < n; ++i) {
      cloud.push_back({oracle::urand(rng, -3, 3), oracle::urand(rng, -3, 3),
                       oracle::urand(rng, -1, 1)});
    }
    const auto init = initial_pseudo_box(cloud);
    REQUIRE_FALSE(init.degenerate);
    for (const Point3& p : cloud) {
      const Vec2 uv = to_box_frame_bev(p, init.box);
      CHECK(std::abs(uv.x) <= 0.5 * init.box.l + 1e-6);
      CHECK(std::abs(uv.y) <= 0.5 * init.box.w + 1e-6);
      CHECK(p.z >= init.box.z - 0.5 * init.box.h - 1e-6);
      CHECK(p.z <= init.box.z + 0.5 * init.box.h + 1e-6);
    }

    std::vector<Vec2> bev;
    for (const Point3& p : cloud) bev.push_back({p.x, p.y});
    const auto sweep = oracle::min_rect_by_angle_sweep(bev);
    CHECK(2.0 * (init.box.l + init.box.w) <= sweep.perimeter * 1.005);
  }
}

TEST_CASE("initial_pseudo_box: collinear input falls back to a flagged AABB") {
  PointCloud line;
  for (int i = 0; i < 10; ++i) line.push_back({static_cast<double>(i), 2.0 * i, 0.1 * i});
  const auto init = initial_pseudo_box(line);
  CHECK(init.degenerate);
  for (const Point3& p : line) {
    const Vec2 uv = to_box_frame_bev(p, init.box);
    CHECK(std::abs(uv.x) <= 0.5 * init.box.l + 1e-6);
    CHECK(std::abs(uv.y) <= 0.5 * init.box.w + 1e-6);
  }
}

TEST_CASE("pseudo_union_rect: containment and component extrema") {
  const auto calib = CameraCalibration::pinhole(700, 700, 600, 180, oracle::ideal_cloud_to_cam());

  // A small box far ahead projects well inside a generous 2D rect.
  const Box3D small(20, 0, 0, 1, 1, 1, 0.0);
  const Rect2D generous{100, 50, 1100, 350};
  const Rect2D u = pseudo_union_rect(small, generous, calib, 1242, 375);
  CHECK(u.x_min == doctest::Approx(generous.x_min));
  CHECK(u.y_min == doctest::Approx(generous.y_min));
  CHECK(u.x_max == doctest::Approx(generous.x_max));
  CHECK(u.y_max == doctest::Approx(generous.y_max));

  CHECK(Rect2D::union_of({0, 0, 50, 50}, {40, 40, 100, 100}).x_min == 0);
  CHECK(Rect2D::union_of({0, 0, 50, 50}, {40, 40, 100, 100}).y_max == 100);

  oracle::Rng rng(5009);
  for (int it = 0; it < 20; ++it) {
    Box3D box = oracle::random_box(rng);
    box.x = oracle::urand(rng, 10, 30);
    const Rect2D rect{oracle::urand(rng, 0, 400), oracle::urand(rng, 0, 150),
                      oracle::urand(rng, 500, 1242), oracle::urand(rng, 200, 375)};
    const Rect2D got = pseudo_union_rect(box, rect, calib, 1242, 375);
    const Rect2D pseudo =
        min_bounding_rect(project_points(box_corners(box), calib)).clamped(1242, 375);
    CHECK(got.x_min <= pseudo.x_min + 1e-9);
    CHECK(got.x_max >= pseudo.x_max - 1e-9);
    CHECK(got.x_min <= rect.x_min + 1e-9);
    CHECK(got.y_max >= rect.y_max - 1e-9);
  }
}

TEST_CASE("prepare_scene: synthetic car over an exact ground plane") {
  Scene scene;
  scene.calib = CameraCalibration::pinhole(700, 700, 621, 187, oracle::ideal_cloud_to_cam());
  scene.image_width = 1242;
  scene.image_height = 375;

  scene.cloud = grid_plane(-1.73, 2, 40, -10, 10, 0.5);
  const Box3D car(15, 1, -0.95, 4.2, 1.8, 1.56, 0.4);
  const auto car_points = box_shell(car, 0.2);
  scene.cloud.insert(scene.cloud.end(), car_points.begin(), car_points.end());

  std::vector<Vec2> px;
  for (const Point3& p : car_points) px.push_back(scene.calib.project(p));
  scene.boxes2d.push_back({"Car", min_bounding_rect(px).clamped(1242, 375), min_bounding_rect(px)});
  // A second annotation over empty sky.
  scene.boxes2d.push_back({"Car", Rect2D{0, 0, 30, 30}, Rect2D{0, 0, 30, 30}});

  PrepConfig config = PrepConfig::defaults_for(SceneMode::outdoor);
  config.min_cluster = 5;
  config.seed = 7;

  const auto result = prepare_scene(scene, config);
  REQUIRE(result.samples.size() == 1);
  REQUIRE(result.skipped.size() == 1);
  CHECK(result.skipped[0].object_index == 1);
  CHECK(result.skipped[0].reason == SkipReason::EmptyFrustum);
  CHECK(result.ground_found);

  const ObjectSample& sample = result.samples[0];
  CHECK(sample.source_index == 0);
  CHECK_FALSE(sample.in_box_points.empty());
  // Every in-box point projects inside the annotated rect.
  for (const Point3& p : sample.in_box_points) {
    CHECK(sample.rect2d.contains(scene.calib.project(p)));
  }
  // The initial box encloses every in-box point.
  for (const Point3& p : sample.in_box_points) {
    const Vec2 uv = to_box_frame_bev(p, sample.initial_box);
    CHECK(std::abs(uv.x) <= 0.5 * sample.initial_box.l + 1e-6);
    CHECK(std::abs(uv.y) <= 0.5 * sample.initial_box.w + 1e-6);
    CHECK(p.z >= sample.initial_box.z - 0.5 * sample.initial_box.h - 1e-6);
    CHECK(p.z <= sample.initial_box.z + 0.5 * sample.initial_box.h + 1e-6);
  }
  // Outdoors the constraint is the annotated rectangle itself.
  CHECK(sample.constraint_rect.x_min == sample.rect2d.x_min);
  CHECK(sample.constraint_rect.y_max == sample.rect2d.y_max);
  // Ground removal trimmed the lowest shell ring, so the box sits above the plane.
  CHECK(sample.initial_box.z - 0.5 * sample.initial_box.h > -1.73 + 0.15);

  // Deterministic reruns.
  const auto rerun = prepare_scene(scene, config);
  REQUIRE(rerun.samples.size() == 1);
  CHECK(rerun.samples[0].in_box_points.size() == sample.in_box_points.size());
  CHECK(rerun.samples[0].initial_box.yaw() == doctest::Approx(sample.initial_box.yaw()));
}

TEST_CASE("prepare_scene: indoor mode uses the union-rectangle constraint") {
  Scene scene;
  scene.calib = CameraCalibration::pinhole(600, 600, 320, 240, oracle::ideal_cloud_to_cam());
  scene.image_width = 640;
  scene.image_height = 480;

  scene.cloud = grid_plane(0.0, 1, 8, -3, 3, 0.1);
  const Box3D table(3, 0, 0.4, 1.2, 0.7, 0.8, 0.2);
  const auto pts = box_shell(table, 0.05);
  scene.cloud.insert(scene.cloud.end(), pts.begin(), pts.end());

  std::vector<Vec2> px;
  for (const Point3& p : pts) px.push_back(scene.calib.project(p));
  const Rect2D full = min_bounding_rect(px).clamped(640, 480);
  // Deliberately under-sized annotation: the union rect must stretch beyond it.
  const Rect2D tight{full.x_min + 15, full.y_min + 10, full.x_max - 15, full.y_max - 10};
  scene.boxes2d.push_back({"table", tight, tight});

  PrepConfig config = PrepConfig::defaults_for(SceneMode::indoor);
  config.min_cluster = 5;
  config.fps_target = 100000;
  config.seed = 3;

  const auto result = prepare_scene(scene, config);
  REQUIRE(result.samples.size() == 1);
  const ObjectSample& sample = result.samples[0];
  CHECK(sample.constraint_rect.x_min <= tight.x_min);
  CHECK(sample.constraint_rect.y_min <= tight.y_min);
  CHECK(sample.constraint_rect.x_max >= tight.x_max);
  CHECK(sample.constraint_rect.y_max >= tight.y_max);
}
