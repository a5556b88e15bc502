#pragma once

#include <array>
#include <cstdint>

#include "boxlift/geometry.hpp"
#include "boxlift/preprocess.hpp"

namespace boxlift {

struct LossWeights {
  double lambda_bpl{0.3};
  double lambda_srl{0.1};
  double lambda_pal{0.1};

  bool valid() const {
    return std::isfinite(lambda_bpl) && std::isfinite(lambda_srl) && std::isfinite(lambda_pal) &&
           lambda_bpl >= 0.0 && lambda_srl >= 0.0 && lambda_pal >= 0.0;
  }

  static LossWeights outdoor_defaults() { return {0.3, 0.1, 0.1}; }
  static LossWeights indoor_defaults() { return {2e-3, 2e-3, 1e-4}; }
};

struct LossBreakdown {
  double bpl{0.0};
  double srl{0.0};
  double pal_coverage{0.0};
  double pal_tightness{0.0};
  double total{0.0};
};

/// Sides of the constraint rectangle that participate in the boundary loss.
/// The fitter masks out sides cut by the image border (truncated objects).
struct BplSideMask {
  bool x_min{true};
  bool y_min{true};
  bool x_max{true};
  bool y_max{true};

  static BplSideMask all() { return {}; }
  bool any() const { return x_min || y_min || x_max || y_max; }
};

/// Coverage term form. `canonical` penalizes ReLU(|u| - l/2) + ReLU(|v| - w/2)
/// in box-frame BEV coordinates and is zero exactly on the closed box.
/// `literal` applies the ReLU to the unsigned edge-line distances themselves
/// (nonzero for interior points); kept for ablation.
enum class PalForm { canonical, literal };

enum class GradientMode { numeric, analytic };

/// L1 discrepancy, in pixels, between the minimum bounding rectangle of the
/// projected box corners and the constraint rectangle. Masked sides drop out.
double boundary_projection_loss(const Box3D& box, const Rect2D& constraint_rect,
                                const CameraCalibration& calib,
                                const BplSideMask& mask = BplSideMask::all());

/// |max(l,w)/min(l,w) - prior_ratio|. Orientation-agnostic; prior_ratio >= 1.
double semantic_ratio_loss(const Box3D& box, double prior_ratio);

/// Sum over points of the BEV excess outside the box footprint (see PalForm).
double pal_coverage_loss(const PointCloud& points, const Box3D& box,
                         PalForm form = PalForm::canonical);

/// Sum over points of the shortest distance to the four BEV edges, meters.
double pal_tightness_loss(const PointCloud& points, const Box3D& box);

/// All terms against sample.constraint_rect and sample.in_box_points.
LossBreakdown total_loss(const ObjectSample& sample, const Box3D& box,
                         const CameraCalibration& calib, const LossWeights& weights,
                         double prior_ratio, const BplSideMask& mask = BplSideMask::all(),
                         PalForm form = PalForm::canonical);

/// Gradient of the total loss over (x, y, z, l, w, h, alpha).
struct GradientResult {
  std::array<double, 7> gradient{};
  // Per-coordinate kink indicator: a finite-difference stencil straddled a
  /// min/max tie, an L1 kink, or a projected-corner argmin change. The
  /// gradient is still returned; the flag informs the optimizer.
  std::array<bool, 7> flagged{};
  bool any_flagged{false};
};

inline constexpr double kGradStepPosition = 1e-4;   // m, also dimensions
inline constexpr double kGradStepYaw = 1e-5;        // rad
inline constexpr double kGradDimFloor = 0.05;       // m, l/w floor inside stencils

GradientResult loss_gradient(const ObjectSample& sample, const Box3D& box,
                             const CameraCalibration& calib, const LossWeights& weights,
                             double prior_ratio, GradientMode mode,
                             const BplSideMask& mask = BplSideMask::all(),
                             PalForm form = PalForm::canonical);

}  // namespace boxlift
