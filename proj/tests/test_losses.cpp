#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "boxlift/losses.hpp"
#include "scenarios.hpp"

using namespace boxlift;

TEST_CASE("boundary_projection_loss: zero at exact alignment, L1 otherwise") {
  const auto calib = CameraCalibration::pinhole(720, 720, 620, 190, oracle::ideal_cloud_to_cam());
  const Box3D box(15, 1, -0.5, 4, 1.8, 1.5, 0.3);
  const Rect2D exact = min_bounding_rect(project_points(box_corners(box), calib));

  CHECK(boundary_projection_loss(box, exact, calib) == doctest::Approx(0.0));

  const Rect2D shifted{exact.x_min + 2, exact.y_min + 3, exact.x_max + 2, exact.y_max + 3};
  CHECK(boundary_projection_loss(box, shifted, calib) == doctest::Approx(10.0));

  const Rect2D mixed{exact.x_min - 2, exact.y_min + 3, exact.x_max + 2, exact.y_max - 3};
  CHECK(boundary_projection_loss(box, mixed, calib) == doctest::Approx(10.0));
}

TEST_CASE("boundary_projection_loss: side masking drops terms") {
  const auto calib = CameraCalibration::pinhole(720, 720, 620, 190, oracle::ideal_cloud_to_cam());
  const Box3D box(15, 1, -0.5, 4, 1.8, 1.5, 0.3);
  const Rect2D exact = min_bounding_rect(project_points(box_corners(box), calib));
  const Rect2D shifted{exact.x_min + 2, exact.y_min + 3, exact.x_max + 2, exact.y_max + 3};

  BplSideMask mask;
  mask.y_min = false;
  CHECK(boundary_projection_loss(box, shifted, calib, mask) == doctest::Approx(7.0));
  mask = {false, false, false, false};
  CHECK(boundary_projection_loss(box, shifted, calib, mask) == doctest::Approx(0.0));
}

TEST_CASE("boundary_projection_loss: behind-camera box raises NonPositiveDepth") {
  const auto calib = CameraCalibration::pinhole(720, 720, 620, 190, oracle::ideal_cloud_to_cam());
  const Box3D behind(-15, 0, 0, 4, 2, 1.5, 0.0);
  CHECK_THROWS_AS(boundary_projection_loss(behind, Rect2D{0, 0, 100, 100}, calib),
                  NonPositiveDepth);
}

TEST_CASE("boundary_projection_loss: matches manual recomputation") {
  oracle::Rng rng(8001);
  for (int it = 0; it < 100; ++it) {
    const auto sc = scenario::random_loss_scenario(rng);
    const Rect2D projected =
        min_bounding_rect(project_points(box_corners(sc.box), sc.calib));
    const Rect2D& target = sc.sample.constraint_rect;
    const double want = std::abs(projected.x_min - target.x_min) +
                        std::abs(projected.x_max - target.x_max) +
                        std::abs(projected.y_min - target.y_min) +
                        std::abs(projected.y_max - target.y_max);
    CHECK(boundary_projection_loss(sc.box, target, sc.calib) ==
          doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("semantic_ratio_loss: exact priors and orientation-agnostic ratio") {
  CHECK(semantic_ratio_loss(Box3D(0, 0, 0, 4.8, 2.0, 1.5, 0.2), 2.4) == doctest::Approx(0.0));
  CHECK(semantic_ratio_loss(Box3D(0, 0, 0, 1.3, 1.3, 1.0, 0.0), 1.0) == doctest::Approx(0.0));
  CHECK(semantic_ratio_loss(Box3D(0, 0, 0, 2.0, 4.8, 1.5, 0.0), 2.4) == doctest::Approx(0.0));
  CHECK(semantic_ratio_loss(Box3D(0, 0, 0, 5.0, 2.0, 1.5, 0.0), 2.4) == doctest::Approx(0.1));
}

TEST_CASE("semantic_ratio_loss: invariant under l/w swap and yaw") {
  oracle::Rng rng(8002);
  for (int it = 0; it < 100; ++it) {
    const Box3D box = oracle::random_box(rng);
    const double prior = oracle::urand(rng, 1.0, 3.0);
    Box3D swapped = box;
    std::swap(swapped.l, swapped.w);
    Box3D spun = box;
    spun.set_yaw(oracle::urand(rng, -M_PI, M_PI));
    const double base = semantic_ratio_loss(box, prior);
    CHECK(semantic_ratio_loss(swapped, prior) == doctest::Approx(base).epsilon(1e-12));
    CHECK(semantic_ratio_loss(spun, prior) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("pal_coverage_loss: dead zone inside, linear excess outside") {
  const Box3D box(3, -2, 0, 4, 2, 1.5, 0.5);
  PointCloud inside;
  oracle::Rng rng(8003);
  for (int i = 0; i < 40; ++i) {
    const double u = oracle::urand(rng, -0.5, 0.5) * box.l;
    const double v = oracle::urand(rng, -0.5, 0.5) * box.w;
    inside.push_back({box.x + box.yaw_cos * u - box.yaw_sin * v,
                      box.y + box.yaw_sin * u + box.yaw_cos * v, oracle::urand(rng, -3, 3)});
  }
  CHECK(pal_coverage_loss(inside, box) == doctest::Approx(0.0));

  const double u_out = 0.5 * box.l + 0.3;
  PointCloud one{{box.x + box.yaw_cos * u_out, box.y + box.yaw_sin * u_out, 0.0}};
  CHECK(pal_coverage_loss(one, box) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("pal_coverage_loss: matches the edge-distance oracle") {
  oracle::Rng rng(8004);
  for (int it = 0; it < 100; ++it) {
    const Box3D box = oracle::random_box(rng);
    PointCloud pts;
    for (int i = 0; i < 30; ++i) {
      pts.push_back({box.x + oracle::urand(rng, -2, 2), box.y + oracle::urand(rng, -2, 2),
                     oracle::urand(rng, -1, 1)});
    }
    double want = 0.0;
    for (const Point3& p : pts) {
      const auto d = point_edge_distances_bev(p, box);
      // Outside along u iff the two opposite edge distances no longer sum to l.
      if (d[0] + d[1] > box.l + 1e-12) want += std::min(d[0], d[1]);
      if (d[2] + d[3] > box.w + 1e-12) want += std::min(d[2], d[3]);
    }
    CHECK(pal_coverage_loss(pts, box) == doctest::Approx(want).epsilon(1e-9));
  }
}

TEST_CASE("pal_coverage_loss: literal form penalizes interior points") {
  const Box3D box(0, 0, 0, 4, 2, 1, 0.0);
  PointCloud center{{0, 0, 0}};
  CHECK(pal_coverage_loss(center, box, PalForm::canonical) == doctest::Approx(0.0));
  // d = (2, 2, 1, 1); ReLU(d - l/2) over {1,2} is 0; ReLU(d - w/2) over {3,4}
  // adds nothing at the center, but off-center interior points do contribute.
  PointCloud off{{-1.0, 0.3, 0.0}};
  CHECK(pal_coverage_loss(off, box, PalForm::canonical) == doctest::Approx(0.0));
  const auto d = point_edge_distances_bev(off[0], box);
  const double want = std::max(0.0, d[0] - 2.0) + std::max(0.0, d[1] - 2.0) +
                      std::max(0.0, d[2] - 1.0) + std::max(0.0, d[3] - 1.0);
  CHECK(want > 0.0);
  CHECK(pal_coverage_loss(off, box, PalForm::literal) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("pal_coverage_loss: monotone in the outward displacement") {
  const Box3D box(1, 1, 0, 3, 1.5, 1, 0.7);
  double prev = 0.0;
  for (double excess = 0.1; excess < 2.0; excess += 0.1) {
    const double u = 0.5 * box.l + excess;
    PointCloud one{{box.x + box.yaw_cos * u, box.y + box.yaw_sin * u, 0.0}};
    const double loss = pal_coverage_loss(one, box);
    CHECK(loss > prev);
    prev = loss;
  }
}

TEST_CASE("pal_tightness_loss: zero on edges, s/2 at a square center") {
  const Box3D square(2, 3, 0, 2, 2, 1, 0.4);
  PointCloud on_edges;
  for (double t = -0.9; t <= 0.9; t += 0.3) {
    const double u = 0.5 * square.l * t;
    on_edges.push_back({square.x + square.yaw_cos * u - square.yaw_sin * (0.5 * square.w),
                        square.y + square.yaw_sin * u + square.yaw_cos * (0.5 * square.w), 0.0});
  }
  CHECK(pal_tightness_loss(on_edges, square) == doctest::Approx(0.0).epsilon(1e-12));

  PointCloud center{{square.x, square.y, 0.0}};
  CHECK(pal_tightness_loss(center, square) == doctest::Approx(1.0));
}

TEST_CASE("pal_tightness_loss: matches explicit line-distance minimum") {
  oracle::Rng rng(8005);
  for (int it = 0; it < 100; ++it) {
    const Box3D box = oracle::random_box(rng);
    PointCloud pts;
    for (int i = 0; i < 25; ++i) {
      pts.push_back({box.x + oracle::urand(rng, -2, 2), box.y + oracle::urand(rng, -2, 2),
                     oracle::urand(rng, -1, 1)});
    }
    double want = 0.0;
    for (const Point3& p : pts) {
      const auto d = oracle::edge_line_distances(p, box);
      want += std::min({d[0], d[1], d[2], d[3]});
    }
    CHECK(pal_tightness_loss(pts, box) == doctest::Approx(want).epsilon(1e-9));
  }
}

TEST_CASE("pal losses: rigid-motion and permutation invariance") {
  oracle::Rng rng(8006);
  for (int it = 0; it < 50; ++it) {
    Box3D box = oracle::random_box(rng);
    PointCloud pts;
    for (int i = 0; i < 20; ++i) {
      pts.push_back({box.x + oracle::urand(rng, -2, 2), box.y + oracle::urand(rng, -2, 2), 0.0});
    }
    const double cov = pal_coverage_loss(pts, box);
    const double tight = pal_tightness_loss(pts, box);

    const double a = oracle::urand(rng, -M_PI, M_PI);
    const double tx = oracle::urand(rng, -5, 5), ty = oracle::urand(rng, -5, 5);
    const double c = std::cos(a), s = std::sin(a);
    PointCloud moved_pts;
    for (const Point3& p : pts) {
      moved_pts.push_back({c * p.x - s * p.y + tx, s * p.x + c * p.y + ty, p.z});
    }
    Box3D moved_box = box;
    moved_box.x = c * box.x - s * box.y + tx;
    moved_box.y = s * box.x + c * box.y + ty;
    moved_box.set_yaw(box.yaw() + a);

    CHECK(pal_coverage_loss(moved_pts, moved_box) == doctest::Approx(cov).epsilon(1e-9));
    CHECK(pal_tightness_loss(moved_pts, moved_box) == doctest::Approx(tight).epsilon(1e-9));

    std::shuffle(moved_pts.begin(), moved_pts.end(), rng);
    CHECK(pal_tightness_loss(moved_pts, moved_box) == doctest::Approx(tight).epsilon(1e-9));
  }
}

TEST_CASE("total_loss: weight isolation, composition and homogeneity") {
  oracle::Rng rng(8007);
  for (int it = 0; it < 50; ++it) {
    const auto sc = scenario::random_loss_scenario(rng);

    const auto zero = total_loss(sc.sample, sc.box, sc.calib, {0, 0, 0}, sc.prior_ratio);
    CHECK(zero.total == doctest::Approx(0.0));

    const auto bpl_only = total_loss(sc.sample, sc.box, sc.calib, {1, 0, 0}, sc.prior_ratio);
    CHECK(bpl_only.total ==
          doctest::Approx(boundary_projection_loss(sc.box, sc.sample.constraint_rect, sc.calib))
              .epsilon(1e-12));

    const LossWeights kitti = LossWeights::outdoor_defaults();
    const auto full = total_loss(sc.sample, sc.box, sc.calib, kitti, sc.prior_ratio);
    const double hand =
        kitti.lambda_bpl * boundary_projection_loss(sc.box, sc.sample.constraint_rect, sc.calib) +
        kitti.lambda_srl * semantic_ratio_loss(sc.box, sc.prior_ratio) +
        kitti.lambda_pal * (pal_coverage_loss(sc.sample.in_box_points, sc.box) +
                            pal_tightness_loss(sc.sample.in_box_points, sc.box));
    CHECK(full.total == doctest::Approx(hand).epsilon(1e-12));
    CHECK(full.total == doctest::Approx(kitti.lambda_bpl * full.bpl + kitti.lambda_srl * full.srl +
                                        kitti.lambda_pal *
                                            (full.pal_coverage + full.pal_tightness))
                            .epsilon(1e-12));

    const double scale = 3.7;
    const auto scaled = total_loss(
        sc.sample, sc.box, sc.calib,
        {scale * kitti.lambda_bpl, scale * kitti.lambda_srl, scale * kitti.lambda_pal},
        sc.prior_ratio);
    CHECK(scaled.total == doctest::Approx(scale * full.total).epsilon(1e-12));
    CHECK(scaled.bpl == doctest::Approx(full.bpl).epsilon(1e-12));
  }
}

TEST_CASE("loss_gradient: flat interior of the coverage term is stationary") {
  const Box3D box(12, 0, -0.5, 4, 2, 1.5, 0.3);
  ObjectSample sample;
  sample.class_label = "Car";
  oracle::Rng rng(8008);
  for (int i = 0; i < 30; ++i) {
    const double u = oracle::urand(rng, -0.4, 0.4) * box.l;
    const double v = oracle::urand(rng, -0.4, 0.4) * box.w;
    sample.in_box_points.push_back({box.x + box.yaw_cos * u - box.yaw_sin * v,
                                    box.y + box.yaw_sin * u + box.yaw_cos * v, box.z});
  }
  sample.constraint_rect = {0, 0, 1, 1};  // unused at zero BPL weight
  const auto calib = CameraCalibration::pinhole(700, 700, 600, 180, oracle::ideal_cloud_to_cam());

  for (GradientMode mode : {GradientMode::numeric, GradientMode::analytic}) {
    const auto g = loss_gradient(sample, box, calib, {0.0, 0.0, 1.0}, 2.0, mode);
    // Tightness still pulls; isolate coverage via a box comfortably larger
    // than the point spread.
    Box3D roomy = box;
    roomy.l *= 1.5;
    roomy.w *= 1.5;
    ObjectSample cov_sample = sample;
    const auto cov =
        loss_gradient(cov_sample, roomy, calib, {0.0, 0.0, 1.0}, 2.0, mode);
    (void)g;
    // Coverage contributes nothing strictly inside; tightness drives l/w only
    // through signs, so check coverage isolation by subtracting tightness.
    const double cov_loss = pal_coverage_loss(cov_sample.in_box_points, roomy);
    CHECK(cov_loss == doctest::Approx(0.0));
  }

  // A pure plateau: coverage-only configuration has an exactly zero gradient.
  // Emulate by comparing total losses at stencil points directly.
  Box3D roomy = box;
  roomy.l *= 1.5;
  roomy.w *= 1.5;
  const double base = pal_coverage_loss(sample.in_box_points, roomy);
  Box3D nudged = roomy;
  nudged.x += 1e-4;
  CHECK(pal_coverage_loss(sample.in_box_points, nudged) == doctest::Approx(base));
}

TEST_CASE("loss_gradient: piecewise-linear SRL slopes and subgradient at zero") {
  ObjectSample sample;
  sample.in_box_points.push_back({0, 0, 0});
  sample.constraint_rect = {0, 0, 1, 1};
  const auto calib = CameraCalibration::pinhole(700, 700, 600, 180, oracle::ideal_cloud_to_cam());
  const LossWeights srl_only{0.0, 1.0, 0.0};

  // l/w = 2.5 > prior 2.4: d/dl = 1/w, d/dw = -l/w^2.
  const Box3D above(10, 0, 0, 5.0, 2.0, 1.5, 0.0);
  for (GradientMode mode : {GradientMode::numeric, GradientMode::analytic}) {
    const auto g = loss_gradient(sample, above, calib, srl_only, 2.4, mode);
    CHECK(g.gradient[3] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(g.gradient[4] == doctest::Approx(-1.25).epsilon(1e-6));
    CHECK(g.gradient[0] == doctest::Approx(0.0));
  }

  // Exactly at the prior: the analytic subgradient is 0 and the point flags.
  const Box3D at(10, 0, 0, 4.8, 2.0, 1.5, 0.0);
  const auto g_at = loss_gradient(sample, at, calib, srl_only, 2.4, GradientMode::analytic);
  CHECK(g_at.gradient[3] == doctest::Approx(0.0));
  CHECK(g_at.flagged[3]);
}

TEST_CASE("loss_gradient: numeric self-consistency against direct differences") {
  oracle::Rng rng(8009);
  for (int it = 0; it < 25; ++it) {
    const auto sc = scenario::random_loss_scenario(rng);
    const auto g =
        loss_gradient(sc.sample, sc.box, sc.calib, sc.weights, sc.prior_ratio, GradientMode::numeric);

    auto eval_at = [&](const Box3D& b) {
      return total_loss(sc.sample, b, sc.calib, sc.weights, sc.prior_ratio).total;
    };
    Box3D plus = sc.box, minus = sc.box;
    plus.x += kGradStepPosition;
    minus.x -= kGradStepPosition;
    const double want = (eval_at(plus) - eval_at(minus)) / (2.0 * kGradStepPosition);
    CHECK(std::abs(g.gradient[0] - want) <= 1e-10);

    Box3D yaw_p = sc.box, yaw_m = sc.box;
    yaw_p.set_yaw(sc.box.yaw() + kGradStepYaw);
    yaw_m.set_yaw(sc.box.yaw() - kGradStepYaw);
    const double want_yaw = (eval_at(yaw_p) - eval_at(yaw_m)) / (2.0 * kGradStepYaw);
    CHECK(std::abs(g.gradient[6] - want_yaw) <= 1e-10);
  }
}

TEST_CASE("loss_gradient: analytic agrees with numeric away from kinks") {
  oracle::Rng rng(8010);
  int compared = 0;
  for (int it = 0; it < 100; ++it) {
    const auto sc = scenario::random_loss_scenario(rng);
    const auto gn =
        loss_gradient(sc.sample, sc.box, sc.calib, sc.weights, sc.prior_ratio, GradientMode::numeric);
    const auto ga = loss_gradient(sc.sample, sc.box, sc.calib, sc.weights, sc.prior_ratio,
                                  GradientMode::analytic);
    for (int p = 0; p < 7; ++p) {
      if (gn.flagged[p] || ga.flagged[p]) continue;
      ++compared;
      const double tol = std::max(1e-9, 1e-4 * std::abs(gn.gradient[p]));
      CHECK(std::abs(ga.gradient[p] - gn.gradient[p]) <= tol);
    }
  }
  CHECK(compared > 500);  // the vast majority of coordinates are unflagged
}

TEST_CASE("loss_gradient: kink proximity is flagged") {
  // A point exactly on the coverage boundary.
  const Box3D box(12, 0, 0, 4, 2, 1.5, 0.0);
  ObjectSample sample;
  sample.in_box_points.push_back({box.x + 0.5 * box.l, box.y, box.z});
  sample.constraint_rect = {0, 0, 1, 1};
  const auto calib = CameraCalibration::pinhole(700, 700, 600, 180, oracle::ideal_cloud_to_cam());

  const auto gn =
      loss_gradient(sample, box, calib, {0.0, 0.0, 1.0}, 2.0, GradientMode::numeric);
  CHECK(gn.any_flagged);
  const auto ga =
      loss_gradient(sample, box, calib, {0.0, 0.0, 1.0}, 2.0, GradientMode::analytic);
  CHECK(ga.any_flagged);
}
