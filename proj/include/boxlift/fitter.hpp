#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "boxlift/losses.hpp"
#include "boxlift/preprocess.hpp"

namespace boxlift {

struct FitConfig {
  LossWeights weights = LossWeights::outdoor_defaults();
  double learning_rate{1.0};
  int max_iterations{300};
  int yaw_starts{4};
  std::map<std::string, double> ratio_priors{{"Car", 2.4}};
  SceneMode mode{SceneMode::outdoor};
  double border_margin{2.0};  // px
  double convergence_epsilon{1e-7};
  std::uint64_t seed{0};
  int workers{1};
  PalForm pal_form{PalForm::canonical};
  GradientMode gradient_mode{GradientMode::analytic};

  bool valid() const {
    bool priors_ok = true;
    for (const auto& [cls, r] : ratio_priors) priors_ok = priors_ok && r >= 1.0;
    return weights.valid() && learning_rate > 0.0 && max_iterations >= 1 && yaw_starts >= 1 &&
           priors_ok && workers >= 1;
  }

  static FitConfig defaults_for(SceneMode mode) {
    FitConfig c;
    c.mode = mode;
    c.weights = mode == SceneMode::indoor ? LossWeights::indoor_defaults()
                                          : LossWeights::outdoor_defaults();
    return c;
  }
};

struct FitResult {
  Box3D box;
  LossBreakdown final_losses;
  LossBreakdown initial_losses;
  int iterations_used{0};
  int start_index{0};
  bool converged{false};
  bool srl_disabled{false};  // class had no ratio prior; SRL weight dropped
  BplSideMask bpl_mask;      // sides that survived border masking
};

struct FitOutcome {
  std::size_t sample_index{0};
  std::optional<FitResult> result;
  std::string error;  // nonempty when the object failed
};

/// k rotated variants of the initial box with yaw offsets evenly spaced over
/// [0, pi). Dimensions grow to the rotated-frame bounding extents, so every
/// candidate still encloses the initial footprint; the quarter-turn candidate
/// is the exact l/w swap.
std::vector<Box3D> yaw_candidates(const Box3D& initial_box, int k);

/// Which constraint-rect sides sit clear of the image border. Sides within
/// border_margin of the border are masked out of the boundary loss.
BplSideMask border_mask(const Rect2D& constraint_rect, int image_width, int image_height,
                        double border_margin);

/// Best-of-starts backtracking descent over the 7 box parameters. Throws
/// AllStartsFailed when every yaw candidate fails to evaluate.
FitResult fit_object(const ObjectSample& sample, const CameraCalibration& calib, int image_width,
                     int image_height, const FitConfig& config);

/// fit_object over every sample; per-object failures are collected, not
/// thrown. Result order follows sample order regardless of config.workers.
std::vector<FitOutcome> fit_scene(const std::vector<ObjectSample>& samples,
                                  const CameraCalibration& calib, int image_width,
                                  int image_height, const FitConfig& config);

}  // namespace boxlift
