#include "boxlift/fitter.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

namespace boxlift {

namespace {

// Base step per parameter group, scaled by FitConfig::learning_rate.
constexpr double kStepPosition = 0.05;   // m
constexpr double kStepDimension = 0.02;  // m
constexpr double kStepYaw = 0.01;        // rad
constexpr int kMaxHalvings = 10;
constexpr double kMinDimension = 0.01;  // m, optimizer floor

std::array<double, 7> parameter_steps(double learning_rate) {
  return {kStepPosition * learning_rate, kStepPosition * learning_rate,
          kStepPosition * learning_rate, kStepDimension * learning_rate,
          kStepDimension * learning_rate, kStepDimension * learning_rate,
          kStepYaw * learning_rate};
}

Box3D apply_step(const Box3D& box, const std::array<double, 7>& delta) {
  Box3D out = box;
  out.x += delta[0];
  out.y += delta[1];
  out.z += delta[2];
  out.l = std::max(kMinDimension, box.l + delta[3]);
  out.w = std::max(kMinDimension, box.w + delta[4]);
  out.h = std::max(kMinDimension, box.h + delta[5]);
  out.set_yaw(box.yaw() + delta[6]);
  return out;
}

// Grows or shrinks one BEV dimension while holding the opposite edge fixed,
// by shifting the center along the dimension axis by half the size change.
// These moves follow the coupled (center, size) valleys that a raw gradient
// step cannot: e.g. extending an SRL-underdetermined box away from the camera
// while its visible face stays pinned to the points.
Box3D anchored_dim_step(const Box3D& box, bool along_l, double amount, int anchor_sign) {
  Box3D out = box;
  double& dim = along_l ? out.l : out.w;
  const double applied = std::max(kMinDimension, dim + amount) - dim;
  dim += applied;
  const double shift = 0.5 * applied * anchor_sign;
  if (along_l) {
    out.x += box.yaw_cos * shift;
    out.y += box.yaw_sin * shift;
  } else {
    out.x += -box.yaw_sin * shift;
    out.y += box.yaw_cos * shift;
  }
  return out;
}

struct StartResult {
  Box3D box;
  LossBreakdown initial;
  LossBreakdown final;
  int iterations{0};
  bool converged{false};
  bool ok{false};
};

StartResult descend(const ObjectSample& sample, const Box3D& start,
                    const CameraCalibration& calib, const LossWeights& weights,
                    double prior_ratio, const BplSideMask& mask, const FitConfig& config) {
  StartResult r;
  auto eval = [&](const Box3D& b) {
    return total_loss(sample, b, calib, weights, prior_ratio, mask, config.pal_form);
  };

  // The roof line is observed: side returns reach the top edge, so the box
  // top may not float above the measured maximum. Without this cap the
  // optimizer absorbs the projected top boundary by inflating height, which
  // silently disables the boundary loss's depth signal. The bottom stays
  // free (ground clearance hides it from the sensor).
  double top_cap = start.z + 0.5 * start.h;
  if (!sample.in_box_points.empty()) {
    double z_max = sample.in_box_points[0].z;
    for (const Point3& p : sample.in_box_points) z_max = std::max(z_max, p.z);
    top_cap = std::max(top_cap, z_max + 0.1);
  }
  auto clamp_top = [top_cap](Box3D b) {
    const double bottom = b.z - 0.5 * b.h;
    const double top = std::min(b.z + 0.5 * b.h, top_cap);
    if (top < b.z + 0.5 * b.h) {
      b.h = std::max(kMinDimension, top - bottom);
      b.z = top - 0.5 * b.h;
    }
    return b;
  };

  Box3D box = start;
  try {
    r.initial = eval(box);
  } catch (const NonPositiveDepth&) {
    return r;  // this start is unusable
  }
  r.ok = true;

  LossBreakdown current = r.initial;
  double trust = 1.0;
  const auto steps = parameter_steps(config.learning_rate);
  std::vector<double> history;
  history.reserve(config.max_iterations + 1);
  history.push_back(current.total);

  // Greedy sprint over the eight edge-anchored moves: repeat the best
  // improving move, doubling its size while it keeps working and halving on
  // rejection. Returns true when any move was accepted.
  auto try_probes = [&](Box3D& box, LossBreakdown& state) {
    const double base = kStepDimension * config.learning_rate;
    double amount = base;
    const double max_amount = 64.0 * base;
    const double min_amount = base / 32.0;
    bool any = false;
    while (amount >= min_amount) {
      Box3D best_box;
      LossBreakdown best_next;
      double best_total = state.total;
      for (bool along_l : {true, false}) {
        for (double amt : {amount, -amount}) {
          for (int anchor : {+1, -1}) {
            const Box3D proposal = clamp_top(anchored_dim_step(box, along_l, amt, anchor));
            try {
              const LossBreakdown next = eval(proposal);
              if (next.total < best_total) {
                best_total = next.total;
                best_next = next;
                best_box = proposal;
              }
            } catch (const NonPositiveDepth&) {
            }
          }
        }
      }
      if (best_total < state.total) {
        box = best_box;
        state = best_next;
        any = true;
        amount = std::min(2.0 * amount, max_amount);
      } else {
        amount *= 0.5;
      }
    }
    return any;
  };

  int it = 0;
  for (; it < config.max_iterations; ++it) {
    GradientResult g;
    try {
      g = loss_gradient(sample, box, calib, weights, prior_ratio, config.gradient_mode, mask,
                        config.pal_form);
    } catch (const NonPositiveDepth&) {
      break;  // cannot differentiate here; keep the best accepted box
    }

    double norm = 0.0;
    std::array<double, 7> scaled{};
    for (int p = 0; p < 7; ++p) {
      scaled[p] = g.gradient[p] * steps[p];
      norm = std::max(norm, std::abs(scaled[p]));
    }
    if (norm == 0.0) {
      r.converged = true;
      break;
    }

    bool accepted = false;
    for (int halving = 0; halving < kMaxHalvings; ++halving) {
      std::array<double, 7> delta{};
      for (int p = 0; p < 7; ++p) delta[p] = -scaled[p] / norm * steps[p] * trust;
      const Box3D proposal = clamp_top(apply_step(box, delta));
      LossBreakdown next;
      try {
        next = eval(proposal);
      } catch (const NonPositiveDepth&) {
        trust *= 0.5;  // stepped behind the camera; shrink
        continue;
      }
      if (next.total < current.total) {
        box = proposal;
        current = next;
        trust = std::min(1.0, 2.0 * trust);
        accepted = true;
        break;
      }
      trust *= 0.5;
    }

    // Gradient step exhausted: probe edge-anchored moves before giving up.
    if (!accepted) {
      accepted = try_probes(box, current);
    }

    if (!accepted) {
      r.converged = true;
      break;
    }
    if (current.total >= history.back()) {
      throw std::logic_error("fitter: accepted step did not decrease the loss");
    }

    history.push_back(current.total);
    if (history.size() > 10) {
      const double improvement = history[history.size() - 11] - current.total;
      if (improvement < config.convergence_epsilon) {
        // Stalled in a shallow trough; a successful probe restarts the
        // stall window, otherwise this start is done.
        if (try_probes(box, current)) {
          history.assign(1, current.total);
        } else {
          r.converged = true;
          ++it;
          break;
        }
      }
    }
  }

  box.renormalize_yaw();
  r.box = box;
  r.final = current;
  r.iterations = it;
  return r;
}

}  // namespace

std::vector<Box3D> yaw_candidates(const Box3D& initial_box, int k) {
  std::vector<Box3D> out;
  out.reserve(std::max(k, 1));
  const double yaw0 = initial_box.yaw();
  for (int i = 0; i < k; ++i) {
    Box3D cand = initial_box;
    if (i == 0) {
      out.push_back(cand);
      continue;
    }
    if (2 * i == k) {  // exact quarter turn: swap l and w
      cand.set_yaw(yaw0 + M_PI_2);
      std::swap(cand.l, cand.w);
      out.push_back(cand);
      continue;
    }
    const double delta = M_PI * i / k;
    const double ac = std::abs(std::cos(delta));
    const double as = std::abs(std::sin(delta));
    cand.set_yaw(yaw0 + delta);
    // Bounding extents of the initial footprint in the rotated frame, so the
    // candidate still contains it.
    cand.l = initial_box.l * ac + initial_box.w * as;
    cand.w = initial_box.l * as + initial_box.w * ac;
    out.push_back(cand);
  }
  return out;
}

BplSideMask border_mask(const Rect2D& constraint_rect, int image_width, int image_height,
                        double border_margin) {
  BplSideMask mask;
  mask.x_min = constraint_rect.x_min > border_margin;
  mask.y_min = constraint_rect.y_min > border_margin;
  mask.x_max = constraint_rect.x_max < image_width - border_margin;
  mask.y_max = constraint_rect.y_max < image_height - border_margin;
  return mask;
}

FitResult fit_object(const ObjectSample& sample, const CameraCalibration& calib, int image_width,
                     int image_height, const FitConfig& config) {
  LossWeights weights = config.weights;
  double prior_ratio = 1.0;
  bool srl_disabled = false;
  if (const auto it = config.ratio_priors.find(sample.class_label);
      it != config.ratio_priors.end()) {
    prior_ratio = it->second;
  } else {
    weights.lambda_srl = 0.0;
    srl_disabled = true;
  }

  const BplSideMask mask =
      border_mask(sample.constraint_rect, image_width, image_height, config.border_margin);

  auto candidates = yaw_candidates(sample.initial_box, config.yaw_starts);

  // Prior-informed starts: a single visible face pins only one BEV dimension,
  // and plain descent settles on the shallow branch of the ratio term (thin
  // box hugging the face). For each candidate, add ratio-consistent variants
  // that grow one dimension, anchored at the sensor-near edge, and let the
  // boundary loss pick the branch. A sliver gets both readings of the ratio:
  // short side as width (depth = long/prior) and short side as the new length
  // (depth = prior * long).
  if (!srl_disabled) {
    const std::size_t base_count = candidates.size();
    for (std::size_t i = 0; i < base_count; ++i) {
      const Box3D cand = candidates[i];
      // Grow dimension `along_l` of cand to `target`, keeping the near edge.
      auto add_grown = [&](bool along_l, double target) {
        const double current = along_l ? cand.l : cand.w;
        const double delta = target - current;
        if (delta < 0.05) return;  // no growth needed, or duplicate of cand
        Box3D grown = cand;
        (along_l ? grown.l : grown.w) += delta;
        const double ex = along_l ? cand.yaw_cos : -cand.yaw_sin;
        const double ey = along_l ? cand.yaw_sin : cand.yaw_cos;
        const double sign = ex * cand.x + ey * cand.y >= 0.0 ? 1.0 : -1.0;
        grown.x += sign * ex * 0.5 * delta;
        grown.y += sign * ey * 0.5 * delta;
        candidates.push_back(grown);
      };
      const bool l_short = cand.l < cand.w;
      const double longer = l_short ? cand.w : cand.l;
      // Short side stays the width: depth becomes longer / prior.
      add_grown(l_short, longer / prior_ratio);
      // Short side becomes the length: depth becomes prior * longer.
      add_grown(l_short, prior_ratio * longer);
    }
  }

  std::optional<StartResult> best;
  int best_start = -1;
  std::optional<LossBreakdown> start0_initial;
  double min_initial_total = std::numeric_limits<double>::infinity();

  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const StartResult sr =
        descend(sample, candidates[s], calib, weights, prior_ratio, mask, config);
    if (!sr.ok) continue;
    if (s == 0) start0_initial = sr.initial;
    min_initial_total = std::min(min_initial_total, sr.initial.total);
    if (!best || sr.final.total < best->final.total) {
      best = sr;
      best_start = static_cast<int>(s);
    }
  }

  if (!best) {
    throw AllStartsFailed("every yaw start failed to evaluate for object of class " +
                          sample.class_label);
  }

  FitResult result;
  result.box = best->box;
  result.final_losses = best->final;
  result.iterations_used = best->iterations;
  result.start_index = best_start;
  result.converged = best->converged;
  result.srl_disabled = srl_disabled;
  result.bpl_mask = mask;

  // z and height are observable only through the boundary loss. When that
  // signal is absent, re-anchor them to the point z-range (outdoor mode).
  const bool z_unobserved = weights.lambda_bpl == 0.0 || !mask.any();
  if (config.mode == SceneMode::outdoor && z_unobserved && !sample.in_box_points.empty()) {
    double z_min = sample.in_box_points[0].z, z_max = z_min;
    for (const Point3& p : sample.in_box_points) {
      z_min = std::min(z_min, p.z);
      z_max = std::max(z_max, p.z);
    }
    result.box.z = 0.5 * (z_min + z_max);
    result.box.h = std::max(z_max - z_min, 1e-6);
    // z/h enter no active loss term here, so the breakdown is unchanged.
  }

  result.initial_losses = start0_initial ? *start0_initial : best->initial;
  if (result.final_losses.total > min_initial_total) {
    throw std::logic_error("fitter: final loss exceeds the best initial loss");
  }
  return result;
}

std::vector<FitOutcome> fit_scene(const std::vector<ObjectSample>& samples,
                                  const CameraCalibration& calib, int image_width,
                                  int image_height, const FitConfig& config) {
  std::vector<FitOutcome> out(samples.size());
  if (samples.empty()) return out;

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= samples.size()) return;
      out[i].sample_index = i;
      try {
        out[i].result = fit_object(samples[i], calib, image_width, image_height, config);
      } catch (const Error& e) {
        out[i].error = e.what();
      }
    }
  };

  const int workers = std::max(1, std::min<int>(config.workers, static_cast<int>(samples.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return out;
}

}  // namespace boxlift
