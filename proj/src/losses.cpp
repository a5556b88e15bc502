#include "boxlift/losses.hpp"

#include <cmath>
#include <limits>

namespace boxlift {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Per-parameter stencil steps, indexed by (x, y, z, l, w, h, alpha).
constexpr double kStep[7] = {kGradStepPosition, kGradStepPosition, kGradStepPosition,
                             kGradStepPosition, kGradStepPosition, kGradStepPosition,
                             kGradStepYaw};

// Safety factor for the analytic-mode kink-crossing tests: a kink is flagged
// for parameter p when its margin is within kKinkSafety * step_p * |slope| of
// switching. The slope arguments below are upper bounds, so a factor of 2
// covers every configuration where the numeric stencil straddles the kink.
constexpr double kKinkSafety = 2.0;

int sgn(double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

struct Signature {
  std::uint64_t hash{1469598103934665603ULL};
  void push(std::int64_t v) {
    hash ^= static_cast<std::uint64_t>(v);
    hash *= 1099511628211ULL;
  }
};

// Collectors threaded through evaluation. All optional; the plain loss ops
// pass none of them.
struct Sinks {
  Signature* sig{nullptr};
  bool* exact_tie{nullptr};
  std::array<double, 7>* grad{nullptr};    // accumulated pre-weighted
  std::array<bool, 7>* near_kink{nullptr}; // analytic-mode flag accumulation

  void mark_tie() const {
    if (exact_tie) *exact_tie = true;
  }
  // Flags parameter p when margin is within crossing distance for slope.
  void near(int p, double margin, double slope) const {
    if (near_kink && margin <= kKinkSafety * kStep[p] * slope) (*near_kink)[p] = true;
  }
};

// Corner sign layout must match box_corners(): bottom face CCW from
// (+l/2, +w/2), then the top face in the same order.
constexpr double kSu[4] = {+1.0, -1.0, -1.0, +1.0};
constexpr double kSv[4] = {+1.0, +1.0, -1.0, -1.0};

// d(corner)/d(param) for param index 0..6 = (x, y, z, l, w, h, alpha).
Eigen::Vector3d corner_partial(const Box3D& box, int corner, int param) {
  const double su = kSu[corner % 4];
  const double sv = kSv[corner % 4];
  const double sh = corner < 4 ? -1.0 : 1.0;
  const double c = box.yaw_cos;
  const double s = box.yaw_sin;
  switch (param) {
    case 0:
      return {1.0, 0.0, 0.0};
    case 1:
      return {0.0, 1.0, 0.0};
    case 2:
      return {0.0, 0.0, 1.0};
    case 3:
      return {c * su * 0.5, s * su * 0.5, 0.0};
    case 4:
      return {-s * sv * 0.5, c * sv * 0.5, 0.0};
    case 5:
      return {0.0, 0.0, sh * 0.5};
    case 6: {
      const double ox = su * 0.5 * box.l;
      const double oy = sv * 0.5 * box.w;
      return {-s * ox - c * oy, c * ox - s * oy, 0.0};
    }
  }
  return Eigen::Vector3d::Zero();
}

struct Extreme {
  double best{0.0};
  double margin{kInf};  // gap to the runner-up
  int index{-1};
  int runner{-1};
};

Extreme find_min(const std::array<double, 8>& vals) {
  Extreme e;
  e.best = kInf;
  for (int i = 0; i < 8; ++i) {
    if (vals[i] < e.best) {
      e.margin = e.best - vals[i];
      e.runner = e.index;
      e.best = vals[i];
      e.index = i;
    } else if (vals[i] - e.best < e.margin) {
      e.margin = vals[i] - e.best;
      e.runner = i;
    }
  }
  return e;
}

Extreme find_max(const std::array<double, 8>& vals) {
  Extreme e;
  e.best = -kInf;
  for (int i = 0; i < 8; ++i) {
    if (vals[i] > e.best) {
      e.margin = vals[i] - e.best;
      e.runner = e.index;
      e.best = vals[i];
      e.index = i;
    } else if (e.best - vals[i] < e.margin) {
      e.margin = e.best - vals[i];
      e.runner = i;
    }
  }
  return e;
}

double eval_bpl(const Box3D& box, const Rect2D& rect, const CameraCalibration& calib,
                const BplSideMask& mask, double grad_weight, const Sinks& sinks) {
  if (!mask.any()) return 0.0;

  const auto corners = box_corners(box);
  const auto& proj = calib.projection();
  std::array<double, 8> px, py;
  std::array<Eigen::Vector3d, 8> abc;  // homogeneous projection (A, B, C) per corner
  for (int i = 0; i < 8; ++i) {
    const Eigen::Vector4d hp(corners[i].x, corners[i].y, corners[i].z, 1.0);
    abc[i] = proj * hp;
    if (abc[i].z() <= CameraCalibration::kMinDepth) {
      throw NonPositiveDepth("box corner projects with depth " + std::to_string(abc[i].z()));
    }
    px[i] = abc[i].x() / abc[i].z();
    py[i] = abc[i].y() / abc[i].z();
  }

  // d(pixel)/d(param) of one corner's px (row 0) or py (row 1).
  auto pixel_slope = [&](int corner, int row, int param) {
    const Eigen::Vector3d dc = corner_partial(box, corner, param);
    const double dden = proj.row(2).head<3>().dot(dc);
    const double value = row == 0 ? px[corner] : py[corner];
    return (proj.row(row).head<3>().dot(dc) - value * dden) / abc[corner].z();
  };

  struct Side {
    bool enabled;
    Extreme extreme;
    double target;
    bool horizontal;  // uses px rather than py
  };
  const std::array<Side, 4> sides{{{mask.x_min, find_min(px), rect.x_min, true},
                                   {mask.y_min, find_min(py), rect.y_min, false},
                                   {mask.x_max, find_max(px), rect.x_max, true},
                                   {mask.y_max, find_max(py), rect.y_max, false}}};

  double loss = 0.0;
  for (const Side& side : sides) {
    if (!side.enabled) continue;
    const double diff = side.extreme.best - side.target;
    loss += std::abs(diff);

    if (side.extreme.margin == 0.0 || diff == 0.0) sinks.mark_tie();
    if (sinks.sig) {
      sinks.sig->push(side.extreme.index);
      sinks.sig->push(sgn(diff));
    }
    if (sinks.near_kink) {
      const int row = side.horizontal ? 0 : 1;
      const int k = side.extreme.index;
      const int k2 = side.extreme.runner;
      for (int p = 0; p < 7; ++p) {
        const double winner_slope = pixel_slope(k, row, p);
        // Corner race: the winner changes when the runner-up catches up.
        if (k2 >= 0) {
          sinks.near(p, side.extreme.margin, std::abs(winner_slope - pixel_slope(k2, row, p)));
        }
        // L1 kink of |projected boundary - target|.
        sinks.near(p, std::abs(diff), std::abs(winner_slope));
      }
    }
    if (sinks.grad && diff != 0.0) {
      const int k = side.extreme.index;
      const double sign = sgn(diff);
      const double value = side.horizontal ? px[k] : py[k];
      const double depth = abc[k].z();
      for (int p = 0; p < 7; ++p) {
        const Eigen::Vector3d dc = corner_partial(box, k, p);
        const double d_num = proj.row(side.horizontal ? 0 : 1).head<3>().dot(dc);
        const double d_den = proj.row(2).head<3>().dot(dc);
        (*sinks.grad)[p] += grad_weight * sign * (d_num - value * d_den) / depth;
      }
    }
  }
  return loss;
}

double eval_srl(const Box3D& box, double prior_ratio, double grad_weight, const Sinks& sinks) {
  const double longer = std::max(box.l, box.w);
  const double shorter = std::min(box.l, box.w);
  const double ratio = longer / shorter;
  const double diff = ratio - prior_ratio;

  if (box.l == box.w || diff == 0.0) sinks.mark_tie();
  if (sinks.sig) {
    sinks.sig->push(box.l > box.w ? 1 : (box.l < box.w ? 2 : 0));
    sinks.sig->push(sgn(diff));
  }
  if (sinks.near_kink) {
    // max/min switch at l == w and the L1 kink at ratio == prior.
    sinks.near(3, std::abs(box.l - box.w), 1.0);
    sinks.near(4, std::abs(box.l - box.w), 1.0);
    sinks.near(box.l > box.w ? 3 : 4, std::abs(diff), 1.0 / shorter);
    sinks.near(box.l > box.w ? 4 : 3, std::abs(diff), ratio / shorter);
  }
  if (sinks.grad && diff != 0.0 && box.l != box.w) {
    const double sign = sgn(diff);
    if (box.l > box.w) {
      (*sinks.grad)[3] += grad_weight * sign / box.w;
      (*sinks.grad)[4] += grad_weight * sign * (-box.l / (box.w * box.w));
    } else {
      (*sinks.grad)[4] += grad_weight * sign / box.l;
      (*sinks.grad)[3] += grad_weight * sign * (-box.w / (box.l * box.l));
    }
  }
  return std::abs(diff);
}

double eval_pal_coverage(const PointCloud& points, const Box3D& box, PalForm form,
                         double grad_weight, const Sinks& sinks) {
  const double c = box.yaw_cos;
  const double s = box.yaw_sin;
  const double hl = 0.5 * box.l;
  const double hw = 0.5 * box.w;
  double loss = 0.0;

  for (const Point3& p : points) {
    const double dx = p.x - box.x;
    const double dy = p.y - box.y;
    const double u = c * dx + s * dy;
    const double v = -s * dx + c * dy;

    if (form == PalForm::canonical) {
      const double eu = std::abs(u) - hl;
      const double ev = std::abs(v) - hw;
      if (eu == 0.0 || ev == 0.0) sinks.mark_tie();
      if (sinks.sig) {
        sinks.sig->push(eu > 0.0 ? sgn(u) : 0);
        sinks.sig->push(ev > 0.0 ? sgn(v) : 0);
      }
      if (sinks.near_kink) {
        sinks.near(0, std::abs(eu), std::abs(c));
        sinks.near(1, std::abs(eu), std::abs(s));
        sinks.near(3, std::abs(eu), 0.5);
        sinks.near(6, std::abs(eu), std::abs(v));
        sinks.near(0, std::abs(ev), std::abs(s));
        sinks.near(1, std::abs(ev), std::abs(c));
        sinks.near(4, std::abs(ev), 0.5);
        sinks.near(6, std::abs(ev), std::abs(u));
      }
      if (eu > 0.0) {
        loss += eu;
        if (sinks.grad) {
          const double su = sgn(u);
          (*sinks.grad)[0] += grad_weight * su * -c;
          (*sinks.grad)[1] += grad_weight * su * -s;
          (*sinks.grad)[3] += grad_weight * -0.5;
          (*sinks.grad)[6] += grad_weight * su * v;
        }
      }
      if (ev > 0.0) {
        loss += ev;
        if (sinks.grad) {
          const double sv = sgn(v);
          (*sinks.grad)[0] += grad_weight * sv * s;
          (*sinks.grad)[1] += grad_weight * sv * -c;
          (*sinks.grad)[4] += grad_weight * -0.5;
          (*sinks.grad)[6] += grad_weight * sv * -u;
        }
      }
    } else {
      // Literal reading: ReLU over the unsigned edge-line distances.
      const double args[4] = {u - hl, u + hl, v - hw, v + hw};
      const double halves[4] = {hl, hl, hw, hw};
      for (int k = 0; k < 4; ++k) {
        const bool along_l = k < 2;
        const double d = std::abs(args[k]);
        const double t = d - halves[k];
        if (t == 0.0) sinks.mark_tie();
        if (sinks.sig) sinks.sig->push(t > 0.0 ? sgn(args[k]) : 0);
        if (sinks.near_kink) {
          sinks.near(0, std::abs(t), along_l ? std::abs(c) : std::abs(s));
          sinks.near(1, std::abs(t), along_l ? std::abs(s) : std::abs(c));
          sinks.near(along_l ? 3 : 4, std::abs(t), 1.0);
          sinks.near(6, std::abs(t), along_l ? std::abs(v) : std::abs(u));
        }
        if (t > 0.0) {
          loss += t;
          if (sinks.grad) {
            const double sk = sgn(args[k]);
            (*sinks.grad)[0] += grad_weight * sk * (along_l ? -c : s);
            (*sinks.grad)[1] += grad_weight * sk * (along_l ? -s : -c);
            (*sinks.grad)[6] += grad_weight * sk * (along_l ? v : -u);
            // The half-extent appears both inside the distance and as -dim/2.
            const double half_sign = (k == 0 || k == 2) ? -0.5 : 0.5;
            (*sinks.grad)[along_l ? 3 : 4] += grad_weight * (sk * half_sign - 0.5);
          }
        }
      }
    }
  }
  return loss;
}

double eval_pal_tightness(const PointCloud& points, const Box3D& box, double grad_weight,
                          const Sinks& sinks) {
  const double c = box.yaw_cos;
  const double s = box.yaw_sin;
  const double hl = 0.5 * box.l;
  const double hw = 0.5 * box.w;
  double loss = 0.0;

  for (const Point3& p : points) {
    const double dx = p.x - box.x;
    const double dy = p.y - box.y;
    const double u = c * dx + s * dy;
    const double v = -s * dx + c * dy;
    const double args[4] = {u - hl, u + hl, v - hw, v + hw};

    int best = 0;
    int runner = -1;
    double best_d = std::abs(args[0]);
    double race = kInf;
    for (int k = 1; k < 4; ++k) {
      const double d = std::abs(args[k]);
      if (d < best_d) {
        race = best_d - d;
        runner = best;
        best_d = d;
        best = k;
      } else if (d - best_d < race) {
        race = d - best_d;
        runner = k;
      }
    }
    loss += best_d;

    const bool tie = race == 0.0;
    if (tie || args[best] == 0.0) sinks.mark_tie();
    if (sinks.sig) {
      sinks.sig->push(tie ? -1 : best);
      sinks.sig->push(sgn(args[best]));
    }
    if (sinks.near_kink) {
      // Signed d(|args[k]|)/d(x, y, l, w, alpha).
      auto dist_deriv = [&](int k, std::array<double, 5>& out) {
        const double sig = sgn(args[k]);
        if (k < 2) {
          out = {-sig * c, -sig * s, (k == 0 ? -0.5 : 0.5) * sig, 0.0, sig * v};
        } else {
          out = {sig * s, -sig * c, 0.0, (k == 2 ? -0.5 : 0.5) * sig, -sig * u};
        }
      };
      std::array<double, 5> db{}, dr{};
      dist_deriv(best, db);
      if (runner >= 0) dist_deriv(runner, dr);
      constexpr int kParam[5] = {0, 1, 3, 4, 6};
      for (int j = 0; j < 5; ++j) {
        if (runner >= 0) sinks.near(kParam[j], race, std::abs(db[j] - dr[j]));
        sinks.near(kParam[j], best_d, std::abs(db[j]));
      }
    }
    if (sinks.grad && !tie && args[best] != 0.0) {
      const double sk = sgn(args[best]);
      const bool along_l = best < 2;
      (*sinks.grad)[0] += grad_weight * sk * (along_l ? -c : s);
      (*sinks.grad)[1] += grad_weight * sk * (along_l ? -s : -c);
      (*sinks.grad)[6] += grad_weight * sk * (along_l ? v : -u);
      const double half_sign = (best == 0 || best == 2) ? -0.5 : 0.5;
      (*sinks.grad)[along_l ? 3 : 4] += grad_weight * sk * half_sign;
    }
  }
  return loss;
}

struct EvalDetail {
  LossBreakdown losses;
  std::uint64_t signature{0};
  bool exact_tie{false};
  std::array<bool, 7> near_kink{};
};

struct EvalArgs {
  const ObjectSample& sample;
  const CameraCalibration& calib;
  const LossWeights& weights;
  double prior_ratio;
  BplSideMask mask;
  PalForm form;
};

EvalDetail evaluate(const EvalArgs& a, const Box3D& box, std::array<double, 7>* grad,
                    bool track_kinks) {
  EvalDetail d;
  Signature sig;
  Sinks sinks{&sig, &d.exact_tie, grad, track_kinks ? &d.near_kink : nullptr};

  LossBreakdown& out = d.losses;
  if (a.weights.lambda_bpl > 0.0) {
    out.bpl = eval_bpl(box, a.sample.constraint_rect, a.calib, a.mask, a.weights.lambda_bpl, sinks);
  }
  if (a.weights.lambda_srl > 0.0) {
    out.srl = eval_srl(box, a.prior_ratio, a.weights.lambda_srl, sinks);
  }
  if (a.weights.lambda_pal > 0.0) {
    out.pal_coverage =
        eval_pal_coverage(a.sample.in_box_points, box, a.form, a.weights.lambda_pal, sinks);
    out.pal_tightness = eval_pal_tightness(a.sample.in_box_points, box, a.weights.lambda_pal, sinks);
  }
  out.total = a.weights.lambda_bpl * out.bpl + a.weights.lambda_srl * out.srl +
              a.weights.lambda_pal * (out.pal_coverage + out.pal_tightness);
  d.signature = sig.hash;
  return d;
}

// Builds the +/- stencil boxes for one parameter and reports the divisor for
// the central difference (dimension floors can shorten the step).
std::pair<Box3D, Box3D> stencil_boxes(const Box3D& box, int param, double& divisor) {
  Box3D plus = box;
  Box3D minus = box;
  const double step = kStep[param];
  divisor = 2.0 * step;
  switch (param) {
    case 0:
      plus.x += step;
      minus.x -= step;
      break;
    case 1:
      plus.y += step;
      minus.y -= step;
      break;
    case 2:
      plus.z += step;
      minus.z -= step;
      break;
    case 3:
      plus.l = std::max(kGradDimFloor, box.l + step);
      minus.l = std::max(kGradDimFloor, box.l - step);
      divisor = plus.l - minus.l;
      break;
    case 4:
      plus.w = std::max(kGradDimFloor, box.w + step);
      minus.w = std::max(kGradDimFloor, box.w - step);
      divisor = plus.w - minus.w;
      break;
    case 5:
      plus.h = std::max(1e-6, box.h + step);
      minus.h = std::max(1e-6, box.h - step);
      divisor = plus.h - minus.h;
      break;
    case 6: {
      const double yaw = box.yaw();
      plus.set_yaw(yaw + step);
      minus.set_yaw(yaw - step);
      break;
    }
  }
  return {plus, minus};
}

}  // namespace

double boundary_projection_loss(const Box3D& box, const Rect2D& constraint_rect,
                                const CameraCalibration& calib, const BplSideMask& mask) {
  return eval_bpl(box, constraint_rect, calib, mask, 0.0, Sinks{});
}

double semantic_ratio_loss(const Box3D& box, double prior_ratio) {
  return eval_srl(box, prior_ratio, 0.0, Sinks{});
}

double pal_coverage_loss(const PointCloud& points, const Box3D& box, PalForm form) {
  return eval_pal_coverage(points, box, form, 0.0, Sinks{});
}

double pal_tightness_loss(const PointCloud& points, const Box3D& box) {
  return eval_pal_tightness(points, box, 0.0, Sinks{});
}

LossBreakdown total_loss(const ObjectSample& sample, const Box3D& box,
                         const CameraCalibration& calib, const LossWeights& weights,
                         double prior_ratio, const BplSideMask& mask, PalForm form) {
  LossBreakdown out;
  if (weights.lambda_bpl > 0.0) {
    out.bpl = boundary_projection_loss(box, sample.constraint_rect, calib, mask);
  }
  if (weights.lambda_srl > 0.0) {
    out.srl = semantic_ratio_loss(box, prior_ratio);
  }
  if (weights.lambda_pal > 0.0) {
    out.pal_coverage = pal_coverage_loss(sample.in_box_points, box, form);
    out.pal_tightness = pal_tightness_loss(sample.in_box_points, box);
  }
  out.total = weights.lambda_bpl * out.bpl + weights.lambda_srl * out.srl +
              weights.lambda_pal * (out.pal_coverage + out.pal_tightness);
  return out;
}

GradientResult loss_gradient(const ObjectSample& sample, const Box3D& box,
                             const CameraCalibration& calib, const LossWeights& weights,
                             double prior_ratio, GradientMode mode, const BplSideMask& mask,
                             PalForm form) {
  const EvalArgs args{sample, calib, weights, prior_ratio, mask, form};
  GradientResult result;

  if (mode == GradientMode::numeric) {
    for (int p = 0; p < 7; ++p) {
      double divisor = 0.0;
      const auto [plus, minus] = stencil_boxes(box, p, divisor);
      const EvalDetail d_plus = evaluate(args, plus, nullptr, false);
      const EvalDetail d_minus = evaluate(args, minus, nullptr, false);
      result.gradient[p] =
          divisor == 0.0 ? 0.0 : (d_plus.losses.total - d_minus.losses.total) / divisor;
      result.flagged[p] =
          d_plus.signature != d_minus.signature || d_plus.exact_tie || d_minus.exact_tie;
    }
  } else {
    std::array<double, 7> grad{};
    const EvalDetail d = evaluate(args, box, &grad, true);
    result.gradient = grad;
    result.flagged = d.near_kink;
  }

  for (bool f : result.flagged) result.any_flagged = result.any_flagged || f;
  return result;
}

}  // namespace boxlift
