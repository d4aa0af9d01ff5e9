#pragma once

#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "boxreg/losses.hpp"

namespace boxreg {

enum class OptimMethod { lbfgs, newton, window };

enum class StopReason { gradient, loss_change, max_iterations, line_search_stall };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::gradient: return "gradient";
    case StopReason::loss_change: return "loss-change";
    case StopReason::max_iterations: return "max-iter";
    case StopReason::line_search_stall: return "line-search-stall";
  }
  return "unknown";
}

struct OptimizerSettings {
  int max_iterations = 500;
  double gradient_tolerance = 1e-6;    // inf-norm of the gradient
  double loss_change_tolerance = 1e-8;
  int lbfgs_history = 10;
  double armijo_c1 = 1e-4;
  double backtrack_factor = 0.5;
  int max_backtracks = 30;
  double newton_fd_step = 1e-4;  // step for second-derivative differences
  int window_size = 10;
  int window_stride = 5;
  OptimMethod method = OptimMethod::lbfgs;
};

inline void validate_optimizer_settings(const OptimizerSettings& s) {
  if (s.max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
  if (!(s.gradient_tolerance > 0.0)) throw std::invalid_argument("gradient_tolerance must be > 0");
  if (!(s.loss_change_tolerance > 0.0)) throw std::invalid_argument("loss_change_tolerance must be > 0");
  if (s.lbfgs_history < 1) throw std::invalid_argument("lbfgs_history must be >= 1");
  if (!(s.newton_fd_step > 0.0)) throw std::invalid_argument("newton_fd_step must be > 0");
  if (s.window_stride < 1 || s.window_stride > s.window_size) {
    throw std::invalid_argument("window_stride must be in [1, window_size]");
  }
}

/// Objective callback: returns the value at x and fills *grad when non-null.
using Objective =
    std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

struct MinimizeResult {
  Eigen::VectorXd x;
  std::vector<double> loss_curve;  // initial value plus one entry per accepted step
  int iterations = 0;
  StopReason reason = StopReason::max_iterations;
};

/// Limited-memory quasi-Newton minimization (two-loop recursion) with a
/// backtracking Armijo line search. The recorded loss curve is non-increasing.
inline MinimizeResult lbfgs_minimize(const Objective& f,
                                     const Eigen::VectorXd& x0,
                                     const OptimizerSettings& settings) {
  validate_optimizer_settings(settings);
  const Eigen::Index dim = x0.size();

  Eigen::VectorXd x = x0;
  Eigen::VectorXd g(dim);
  double fx = f(x, &g);
  if (!std::isfinite(fx) || !g.allFinite()) {
    throw std::runtime_error("objective not finite at starting point");
  }

  MinimizeResult res;
  res.x = x;
  res.loss_curve.push_back(fx);
  if (g.lpNorm<Eigen::Infinity>() < settings.gradient_tolerance) {
    res.reason = StopReason::gradient;
    return res;
  }

  struct Pair {
    Eigen::VectorXd s, y;
    double rho;
  };
  std::deque<Pair> history;

  for (int iter = 1; iter <= settings.max_iterations; ++iter) {
    // Two-loop recursion for the search direction.
    Eigen::VectorXd q = g;
    std::vector<double> alpha(history.size());
    for (int i = static_cast<int>(history.size()) - 1; i >= 0; --i) {
      alpha[i] = history[i].rho * history[i].s.dot(q);
      q -= alpha[i] * history[i].y;
    }
    if (!history.empty()) {
      const Pair& last = history.back();
      q *= last.s.dot(last.y) / last.y.squaredNorm();
    }
    for (std::size_t i = 0; i < history.size(); ++i) {
      const double beta = history[i].rho * history[i].y.dot(q);
      q += (alpha[i] - beta) * history[i].s;
    }
    Eigen::VectorXd dir = -q;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      // Curvature information went stale; fall back to steepest descent.
      history.clear();
      dir = -g;
      slope = g.dot(dir);
    }

    // Backtracking line search. The first trial also computes the gradient
    // since a unit step is usually accepted.
    double t = 1.0;
    bool accepted = false;
    double f_new = fx;
    Eigen::VectorXd x_new, g_new(dim);
    bool have_grad = false;
    for (int bt = 0; bt <= settings.max_backtracks; ++bt) {
      x_new = x + t * dir;
      if (bt == 0) {
        f_new = f(x_new, &g_new);
        have_grad = true;
      } else {
        f_new = f(x_new, nullptr);
        have_grad = false;
      }
      if (std::isfinite(f_new) &&
          f_new <= fx + settings.armijo_c1 * t * slope) {
        accepted = true;
        break;
      }
      t *= settings.backtrack_factor;
    }
    if (!accepted) {
      res.reason = StopReason::line_search_stall;
      return res;
    }
    if (!have_grad) f(x_new, &g_new);
    if (!g_new.allFinite()) {
      res.reason = StopReason::line_search_stall;
      return res;
    }

    // When the full step is accepted but the curvature condition fails, the
    // step undershoots; expand while the sufficient-decrease bound still
    // holds so the (s, y) pair keeps positive curvature.
    if (t == 1.0) {
      for (int ex = 0; ex < 20 && g_new.dot(dir) < 0.9 * slope; ++ex) {
        const double t2 = 2.0 * t;
        Eigen::VectorXd x2 = x + t2 * dir;
        Eigen::VectorXd g2(dim);
        const double f2 = f(x2, &g2);
        if (!std::isfinite(f2) || !g2.allFinite() ||
            f2 > fx + settings.armijo_c1 * t2 * slope) {
          break;
        }
        t = t2;
        x_new = std::move(x2);
        f_new = f2;
        g_new = std::move(g2);
      }
    }

    Eigen::VectorXd step = x_new - x;
    Eigen::VectorXd y = g_new - g;
    const double sy = step.dot(y);
    if (sy > 1e-10 * step.norm() * y.norm()) {
      history.push_back({std::move(step), std::move(y), 1.0 / sy});
      if (static_cast<int>(history.size()) > settings.lbfgs_history) {
        history.pop_front();
      }
    }

    const double drop = fx - f_new;
    x = x_new;
    fx = f_new;
    g = g_new;
    res.x = x;
    res.loss_curve.push_back(fx);
    res.iterations = iter;

    if (g.lpNorm<Eigen::Infinity>() < settings.gradient_tolerance) {
      res.reason = StopReason::gradient;
      return res;
    }
    if (drop < settings.loss_change_tolerance) {
      res.reason = StopReason::loss_change;
      return res;
    }
  }
  res.reason = StopReason::max_iterations;
  return res;
}

namespace detail {

// Objective terms that depend on the pose of one frame, scaled as in the
// total loss. Constant terms are left out; per-coordinate updates only need
// differences.
inline double local_loss(const Track& track,
                         const std::vector<PointFrame>& frames,
                         const LossConfig& cfg, int f) {
  const int n = static_cast<int>(track.size());
  double val = 0.0;
  if (cfg.closeness_weight > 0.0) {
    val += cfg.closeness_weight / n * closeness_value(frames[f], track[f], cfg.top_k);
  }
  if (cfg.enclosure_weight > 0.0) {
    val += cfg.enclosure_weight / n * enclosure_value(frames[f], track[f], cfg.l1_width);
  }
  if (cfg.smoothness_weight > 0.0 && n >= 3) {
    for (int i = f - 1; i <= f + 1; ++i) {
      if (i >= 1 && i + 1 < n) {
        val += cfg.smoothness_weight / (n - 2) * smoothness_term(track, i);
      }
    }
  }
  if (cfg.alignment_weight > 0.0 && n >= 2) {
    for (int i = f - 1; i <= f; ++i) {
      if (i >= 0 && i + 1 < n) {
        val += cfg.alignment_weight / (n - 1) * alignment_term(track, i);
      }
    }
  }
  return val;
}

// Pointer to the free coordinate j of frame f under the current mode.
inline double* pose_coord(BoxState& b, int j, bool bev_mode) {
  if (bev_mode) {
    double* c2[3] = {&b.x, &b.y, &b.yaw};
    return c2[j];
  }
  double* c3[6] = {&b.x, &b.y, &b.z, &b.roll, &b.pitch, &b.yaw};
  return c3[j];
}

}  // namespace detail

/// One coordinate-wise Newton sweep: each free parameter moves by
/// -L'(v)/L''(v) with both derivatives from central differences. Falls back
/// to a backtracked gradient step when the curvature is tiny or the Newton
/// step does not decrease the loss. Returns the updated pose vector.
inline Eigen::VectorXd newton_coordinate_step(
    const Track& track, const std::vector<PointFrame>& frames,
    const LossConfig& cfg, const OptimizerSettings& settings) {
  validate_optimizer_settings(settings);
  const int n = static_cast<int>(track.size());
  if (n < 1 || frames.size() != track.size()) {
    throw std::invalid_argument("newton step: frame/track length mismatch");
  }
  const int dim = pose_dim(cfg.bev_mode);
  const double h1 = 1e-5;
  const double h2 = settings.newton_fd_step;

  Track work = track;
  for (int f = 0; f < n; ++f) {
    for (int j = 0; j < dim; ++j) {
      double* v = detail::pose_coord(work[f], j, cfg.bev_mode);
      const double v0 = *v;
      const auto eval = [&](double value) {
        *v = value;
        return detail::local_loss(work, frames, cfg, f);
      };
      const double f0 = eval(v0);
      const double grad = (eval(v0 + h1) - eval(v0 - h1)) / (2.0 * h1);
      // Difference noise floor: treat the coordinate as flat below it.
      if (std::abs(grad) < 1e-9 * (1.0 + std::abs(f0))) {
        *v = v0;
        continue;
      }
      const double curv = (eval(v0 + h2) - 2.0 * f0 + eval(v0 - h2)) / (h2 * h2);

      bool moved = false;
      if (std::abs(curv) >= 1e-8) {
        const double v_newton = v0 - grad / curv;
        if (eval(v_newton) < f0) moved = true;
      }
      if (!moved) {
        double t = 1.0;
        for (int bt = 0; bt <= settings.max_backtracks; ++bt) {
          if (eval(v0 - t * grad) < f0) {
            moved = true;
            break;
          }
          t *= settings.backtrack_factor;
        }
      }
      if (!moved) *v = v0;
    }
  }
  return track_to_pose(work, cfg.bev_mode);
}

/// Result of one registration run.
struct RegistrationResult {
  Track refined;
  std::vector<double> loss_curve;
  int iterations = 0;
  StopReason reason = StopReason::max_iterations;
  bool window_fallback = false;
};

inline RegistrationResult register_sliding_window(
    const Track& track0, const std::vector<PointFrame>& frames,
    const LossConfig& cfg, const OptimizerSettings& settings);

/// Registers the track against the frames by minimizing the total loss over
/// the free pose vector, starting from the initial poses.
inline RegistrationResult register_track(const Track& track0,
                                         const std::vector<PointFrame>& frames,
                                         const LossConfig& cfg,
                                         const OptimizerSettings& settings) {
  validate_optimizer_settings(settings);
  if (settings.method == OptimMethod::window) {
    return register_sliding_window(track0, frames, cfg, settings);
  }

  RegistrationResult out;
  out.refined = track0;

  if (settings.method == OptimMethod::lbfgs) {
    Track scratch = track0;
    const Objective objective = [&](const Eigen::VectorXd& x,
                                    Eigen::VectorXd* grad) {
      apply_pose(x, scratch, cfg.bev_mode);
      if (grad == nullptr) return total_loss_value(scratch, frames, cfg);
      TrackTerm t = total_loss(scratch, frames, cfg);
      *grad = std::move(t.grad);
      return t.value;
    };
    const MinimizeResult res =
        lbfgs_minimize(objective, track_to_pose(track0, cfg.bev_mode), settings);
    apply_pose(res.x, out.refined, cfg.bev_mode);
    out.loss_curve = res.loss_curve;
    out.iterations = res.iterations;
    out.reason = res.reason;
    return out;
  }

  // Coordinate-wise Newton sweeps.
  double prev = total_loss_value(out.refined, frames, cfg);
  if (!std::isfinite(prev)) throw std::runtime_error("objective not finite at starting point");
  out.loss_curve.push_back(prev);
  out.reason = StopReason::max_iterations;
  for (int sweep = 1; sweep <= settings.max_iterations; ++sweep) {
    const Eigen::VectorXd pose =
        newton_coordinate_step(out.refined, frames, cfg, settings);
    apply_pose(pose, out.refined, cfg.bev_mode);
    const double val = total_loss_value(out.refined, frames, cfg);
    out.loss_curve.push_back(val);
    out.iterations = sweep;
    if (prev - val < settings.loss_change_tolerance) {
      out.reason = StopReason::loss_change;
      break;
    }
    prev = val;
  }
  return out;
}

/// Optimizes fixed-length windows of frames, advancing by the stride; poses
/// outside the active window stay frozen, so every accepted step decreases
/// the full-track loss and overlapping frames keep the latest window's
/// result. Falls back to a full-batch run when the track is shorter than one
/// window.
inline RegistrationResult register_sliding_window(
    const Track& track0, const std::vector<PointFrame>& frames,
    const LossConfig& cfg, const OptimizerSettings& settings) {
  validate_optimizer_settings(settings);
  const int n = static_cast<int>(track0.size());
  const int w = settings.window_size;

  if (n < w) {
    OptimizerSettings full = settings;
    full.method = OptimMethod::lbfgs;
    RegistrationResult res = register_track(track0, frames, cfg, full);
    res.window_fallback = true;
    return res;
  }

  std::vector<int> starts;
  for (int s = 0;; s += settings.window_stride) {
    if (s + w >= n) {
      starts.push_back(n - w);
      break;
    }
    starts.push_back(s);
  }

  RegistrationResult out;
  out.refined = track0;
  out.loss_curve.push_back(total_loss_value(out.refined, frames, cfg));
  const int dim = pose_dim(cfg.bev_mode);

  Track scratch = track0;
  for (const int start : starts) {
    Eigen::VectorXd full_pose = track_to_pose(out.refined, cfg.bev_mode);
    const Objective objective = [&](const Eigen::VectorXd& xw,
                                    Eigen::VectorXd* grad) {
      Eigen::VectorXd pose = full_pose;
      pose.segment(dim * start, dim * w) = xw;
      apply_pose(pose, scratch, cfg.bev_mode);
      if (grad == nullptr) return total_loss_value(scratch, frames, cfg);
      TrackTerm t = total_loss(scratch, frames, cfg);
      *grad = t.grad.segment(dim * start, dim * w);
      return t.value;
    };
    const MinimizeResult res = lbfgs_minimize(
        objective, full_pose.segment(dim * start, dim * w).eval(), settings);
    full_pose.segment(dim * start, dim * w) = res.x;
    apply_pose(full_pose, out.refined, cfg.bev_mode);
    // res.loss_curve[0] duplicates the current full-track loss.
    out.loss_curve.insert(out.loss_curve.end(), res.loss_curve.begin() + 1,
                          res.loss_curve.end());
    out.iterations += res.iterations;
    out.reason = res.reason;
  }
  return out;
}

}  // namespace boxreg
