#pragma once

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "boxreg/geometry.hpp"

namespace boxreg {

/// Weights and shape parameters of the registration objective.
struct LossConfig {
  double closeness_weight = 1.0;    // delta
  double enclosure_weight = 2.0;    // omega
  double smoothness_weight = 0.01;  // epsilon
  double alignment_weight = 0.01;   // theta
  int top_k = 32;                   // closest points per axis for closeness
  double l1_width = 0.01;           // half-width of the L1 quadratic cap (m)
  bool bev_mode = false;            // optimize (x, y, yaw) only
};

inline void validate_loss_config(const LossConfig& cfg) {
  const double ws[] = {cfg.closeness_weight, cfg.enclosure_weight,
                       cfg.smoothness_weight, cfg.alignment_weight};
  for (double w : ws) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw std::invalid_argument("loss weights must be finite and >= 0");
    }
  }
  if (cfg.top_k < 1) throw std::invalid_argument("top_k must be >= 1");
  if (!(cfg.l1_width >= 0.0)) throw std::invalid_argument("l1_width must be >= 0");
}

/// Scalar term value with its gradient in one box pose (x,y,z,roll,pitch,yaw).
struct TermGrad {
  double value = 0.0;
  Vector6d grad = Vector6d::Zero();
};

/// Scalar term value with its gradient over all track poses (6 per frame).
struct TrackTerm {
  double value = 0.0;
  Eigen::VectorXd grad;
};

namespace detail {

// |t| smoothed with a quadratic cap inside [-mu, mu]; C1 for mu > 0.
inline double smooth_abs(double t, double mu) {
  const double a = std::abs(t);
  if (a >= mu || mu <= 0.0) return a;
  return 0.5 * t * t / mu + 0.5 * mu;
}

inline double smooth_abs_deriv(double t, double mu) {
  if (mu > 0.0 && std::abs(t) < mu) return t / mu;
  // At mu = 0 a point exactly on a face takes the interior-side subgradient
  // (boundary counts as inside), so the opposite-face pair cancels and an
  // on-face scan is a stationary point.
  return t > 0.0 ? 1.0 : -1.0;
}

inline double sign_or_zero(double v) {
  return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
}

// Heading wrap into the closed interval [-pi/2, pi/2]; unlike wrap_angle,
// exact boundary angles stay put, so a heading at +pi/2 is not flipped.
inline double wrap_heading(double theta) {
  return theta - M_PI * std::rint(theta / M_PI);
}

inline Vector6d pose_of(const BoxState& b) {
  Vector6d p;
  p << b.x, b.y, b.z, b.roll, b.pitch, b.yaw;
  return p;
}

}  // namespace detail

/// Mean squared distance from the top-K closest points to each visible face.
/// Returns the per-frame summand; the total objective averages over frames.
inline TermGrad closeness(const PointFrame& frame, const BoxState& box,
                          int top_k) {
  if (frame.points.empty()) throw std::invalid_argument("closeness: empty frame");
  if (top_k < 1) throw std::invalid_argument("closeness: top_k must be >= 1");

  const std::array<int, 3> signs = visible_faces(frame, box);
  const RotationDerivs rd = rotation_derivs(box.roll, box.pitch, box.yaw);
  const Vec3 c = box.center();
  const Vec3 half = 0.5 * box.size();
  const int m = static_cast<int>(frame.points.size());
  const int k_eff = std::min(top_k, m);

  std::vector<Vec3> rel(m);
  for (int j = 0; j < m; ++j) rel[j] = frame.points[j] - c;

  TermGrad out;
  std::vector<double> t(m);
  std::vector<int> order(m);
  for (int axis = 0; axis < 3; ++axis) {
    const double s = static_cast<double>(signs[axis]);
    for (int j = 0; j < m; ++j) {
      t[j] = s * rd.r.col(axis).dot(rel[j]) - half[axis];
    }
    std::iota(order.begin(), order.end(), 0);
    std::nth_element(order.begin(), order.begin() + (k_eff - 1), order.end(),
                     [&](int a, int b) { return std::abs(t[a]) < std::abs(t[b]); });

    double sum_sq = 0.0;
    double sum_2t = 0.0;
    Vec3 moment = Vec3::Zero();
    for (int i = 0; i < k_eff; ++i) {
      const int j = order[i];
      sum_sq += t[j] * t[j];
      sum_2t += 2.0 * t[j];
      moment += 2.0 * t[j] * rel[j];
    }
    const double inv_k = 1.0 / k_eff;
    out.value += inv_k * sum_sq;
    out.grad.head<3>() += inv_k * (-s * sum_2t) * rd.r.col(axis);
    out.grad[3] += inv_k * s * rd.d_roll.col(axis).dot(moment);
    out.grad[4] += inv_k * s * rd.d_pitch.col(axis).dot(moment);
    out.grad[5] += inv_k * s * rd.d_yaw.col(axis).dot(moment);
  }
  return out;
}

/// Mean L1 distance from every point to all six faces, constant (l+w+h)/6
/// while all points are interior. Per-frame summand, like closeness.
inline TermGrad enclosure(const PointFrame& frame, const BoxState& box,
                          double mu) {
  if (frame.points.empty()) throw std::invalid_argument("enclosure: empty frame");

  const RotationDerivs rd = rotation_derivs(box.roll, box.pitch, box.yaw);
  const Vec3 c = box.center();
  const Vec3 half = 0.5 * box.size();
  const int m = static_cast<int>(frame.points.size());

  TermGrad out;
  for (int axis = 0; axis < 3; ++axis) {
    for (double s : {1.0, -1.0}) {
      double sum_phi = 0.0;
      double sum_dphi = 0.0;
      Vec3 moment = Vec3::Zero();
      for (const Vec3& p : frame.points) {
        const Vec3 rel = p - c;
        const double t = s * rd.r.col(axis).dot(rel) - half[axis];
        sum_phi += detail::smooth_abs(t, mu);
        const double dphi = detail::smooth_abs_deriv(t, mu);
        sum_dphi += dphi;
        moment += dphi * rel;
      }
      out.value += sum_phi;
      out.grad.head<3>() += (-s * sum_dphi) * rd.r.col(axis);
      out.grad[3] += s * rd.d_roll.col(axis).dot(moment);
      out.grad[4] += s * rd.d_pitch.col(axis).dot(moment);
      out.grad[5] += s * rd.d_yaw.col(axis).dot(moment);
    }
  }
  const double scale = 1.0 / (6.0 * m);
  out.value *= scale;
  out.grad *= scale;
  return out;
}

/// Value-only closeness, for line searches and finite differences.
inline double closeness_value(const PointFrame& frame, const BoxState& box,
                              int top_k) {
  if (frame.points.empty()) throw std::invalid_argument("closeness: empty frame");
  if (top_k < 1) throw std::invalid_argument("closeness: top_k must be >= 1");

  const std::array<int, 3> signs = visible_faces(frame, box);
  const Mat3 r = rotation_matrix(box);
  const Vec3 c = box.center();
  const Vec3 half = 0.5 * box.size();
  const int m = static_cast<int>(frame.points.size());
  const int k_eff = std::min(top_k, m);

  double value = 0.0;
  std::vector<double> dist(m);
  for (int axis = 0; axis < 3; ++axis) {
    const double s = static_cast<double>(signs[axis]);
    for (int j = 0; j < m; ++j) {
      dist[j] = std::abs(s * r.col(axis).dot(frame.points[j] - c) - half[axis]);
    }
    std::nth_element(dist.begin(), dist.begin() + (k_eff - 1), dist.end());
    double sum_sq = 0.0;
    for (int i = 0; i < k_eff; ++i) sum_sq += dist[i] * dist[i];
    value += sum_sq / k_eff;
  }
  return value;
}

/// Value-only enclosure.
inline double enclosure_value(const PointFrame& frame, const BoxState& box,
                              double mu) {
  if (frame.points.empty()) throw std::invalid_argument("enclosure: empty frame");
  const Mat3 r = rotation_matrix(box);
  const Vec3 c = box.center();
  const Vec3 half = 0.5 * box.size();
  double value = 0.0;
  for (int axis = 0; axis < 3; ++axis) {
    for (double s : {1.0, -1.0}) {
      for (const Vec3& p : frame.points) {
        value += detail::smooth_abs(s * r.col(axis).dot(p - c) - half[axis], mu);
      }
    }
  }
  return value / (6.0 * frame.points.size());
}

/// One smoothness summand centered at frame i (valid for 1 <= i <= N-2).
inline double smoothness_term(const Track& track, int i) {
  Vector6d v;
  const Vector6d d_cur = detail::pose_of(track[i + 1]) - detail::pose_of(track[i]);
  const Vector6d d_prev = detail::pose_of(track[i]) - detail::pose_of(track[i - 1]);
  for (int k = 0; k < 6; ++k) v[k] = std::abs(d_cur[k]) - std::abs(d_prev[k]);
  return v.norm();
}

/// One alignment summand for the transition i -> i+1. The heading enters as
/// a line, not a ray: a box driving "backward" along the trajectory scores
/// the same as one driving forward, which is what wrapping the heading into
/// [-pi/2, pi/2] is for.
inline double alignment_term(const Track& track, int i) {
  const Vec3 d = track[i + 1].center() - track[i].center();
  const double dist = d.norm();
  if (dist <= 1e-9) return 0.0;
  const double beta = track[i].pitch;
  const double gamma = detail::wrap_heading(track[i].yaw);
  const Vec3 o(std::cos(beta) * std::cos(gamma),
               std::cos(beta) * std::sin(gamma), -std::sin(beta));
  const Vec3 u = d / dist;
  const double flip = o.dot(u) >= 0.0 ? 1.0 : -1.0;
  return (o - flip * u).norm();
}

/// Constant-velocity prior: penalizes the change between consecutive
/// componentwise-absolute pose difference vectors. Zero for N < 3.
inline TrackTerm smoothness(const Track& track) {
  const int n = static_cast<int>(track.size());
  TrackTerm out;
  out.grad = Eigen::VectorXd::Zero(6 * std::max(n, 1));
  if (n < 3) return out;

  std::vector<Vector6d> delta(n - 1);
  for (int i = 0; i + 1 < n; ++i) {
    delta[i] = detail::pose_of(track[i + 1]) - detail::pose_of(track[i]);
  }
  const double scale = 1.0 / (n - 2);
  for (int i = 1; i + 1 < n; ++i) {
    Vector6d v;
    for (int k = 0; k < 6; ++k) {
      v[k] = std::abs(delta[i][k]) - std::abs(delta[i - 1][k]);
    }
    const double norm = v.norm();
    out.value += scale * norm;
    // The 2-norm kink: below float noise the subgradient is taken as zero,
    // so exact constant-velocity tracks are stationary points.
    if (norm <= 1e-12) continue;
    const Vector6d vhat = v / norm;
    for (int k = 0; k < 6; ++k) {
      const double g_cur = vhat[k] * detail::sign_or_zero(delta[i][k]);
      const double g_prev = vhat[k] * detail::sign_or_zero(delta[i - 1][k]);
      out.grad[6 * (i + 1) + k] += scale * g_cur;
      out.grad[6 * i + k] += scale * (-g_cur - g_prev);
      out.grad[6 * (i - 1) + k] += scale * g_prev;
    }
  }
  return out;
}

/// Gap between the box heading and the unit center displacement. Yaw is
/// wrapped into [-pi/2, pi/2] before the heading is formed, and the heading
/// is matched as a line (the nearer of +-U), so boxes facing backward along
/// the trajectory are not penalized. Displacements below 1e-9 m contribute
/// nothing (stationary guard).
inline TrackTerm alignment(const Track& track) {
  const int n = static_cast<int>(track.size());
  TrackTerm out;
  out.grad = Eigen::VectorXd::Zero(6 * std::max(n, 1));
  if (n < 2) return out;

  const double scale = 1.0 / (n - 1);
  for (int i = 0; i + 1 < n; ++i) {
    const Vec3 d = track[i + 1].center() - track[i].center();
    const double dist = d.norm();
    if (dist <= 1e-9) continue;
    Vec3 u = d / dist;

    const double beta = track[i].pitch;
    const double gamma = detail::wrap_heading(track[i].yaw);
    const double cb = std::cos(beta), sb = std::sin(beta);
    const double cg = std::cos(gamma), sg = std::sin(gamma);
    const Vec3 o(cb * cg, cb * sg, -sb);
    const double flip = o.dot(u) >= 0.0 ? 1.0 : -1.0;
    u *= flip;
    const Vec3 r = o - u;
    const double norm = r.norm();
    out.value += scale * norm;
    if (norm <= 1e-12) continue;  // kink: zero subgradient at perfect alignment
    const Vec3 rhat = r / norm;

    const Vec3 do_dpitch(-sb * cg, -sb * sg, -cb);
    const Vec3 do_dyaw(-cb * sg, cb * cg, 0.0);
    out.grad[6 * i + 4] += scale * rhat.dot(do_dpitch);
    out.grad[6 * i + 5] += scale * rhat.dot(do_dyaw);

    const Vec3 g_d = -flip * (rhat - u * u.dot(rhat)) / dist;
    out.grad.segment<3>(6 * (i + 1)) += scale * g_d;
    out.grad.segment<3>(6 * i) -= scale * g_d;
  }
  return out;
}

/// Number of free pose parameters per frame.
inline int pose_dim(bool bev_mode) { return bev_mode ? 3 : 6; }

inline Eigen::VectorXd track_to_pose(const Track& track, bool bev_mode) {
  const int dim = pose_dim(bev_mode);
  Eigen::VectorXd pose(dim * track.size());
  for (std::size_t i = 0; i < track.size(); ++i) {
    const BoxState& b = track[i];
    if (bev_mode) {
      pose.segment<3>(3 * i) << b.x, b.y, b.yaw;
    } else {
      pose.segment<6>(6 * i) << b.x, b.y, b.z, b.roll, b.pitch, b.yaw;
    }
  }
  return pose;
}

/// Writes free pose parameters back; fixed parameters and size are untouched.
inline void apply_pose(const Eigen::VectorXd& pose, Track& track,
                       bool bev_mode) {
  const int dim = pose_dim(bev_mode);
  if (pose.size() != static_cast<Eigen::Index>(dim * track.size())) {
    throw std::invalid_argument("pose vector length does not match track");
  }
  for (std::size_t i = 0; i < track.size(); ++i) {
    BoxState& b = track[i];
    if (bev_mode) {
      b.x = pose[3 * i + 0];
      b.y = pose[3 * i + 1];
      b.yaw = pose[3 * i + 2];
    } else {
      b.x = pose[6 * i + 0];
      b.y = pose[6 * i + 1];
      b.z = pose[6 * i + 2];
      b.roll = pose[6 * i + 3];
      b.pitch = pose[6 * i + 4];
      b.yaw = pose[6 * i + 5];
    }
  }
}

namespace detail {

inline Eigen::VectorXd project_grad(const Eigen::VectorXd& full, int n,
                                    bool bev_mode) {
  if (!bev_mode) return full;
  Eigen::VectorXd out(3 * n);
  for (int i = 0; i < n; ++i) {
    out[3 * i + 0] = full[6 * i + 0];
    out[3 * i + 1] = full[6 * i + 1];
    out[3 * i + 2] = full[6 * i + 5];
  }
  return out;
}

}  // namespace detail

/// Weighted total objective over the whole track. The gradient covers the
/// free pose vector: 6N entries, or 3N (x, y, yaw) in BEV mode.
inline TrackTerm total_loss(const Track& track,
                            const std::vector<PointFrame>& frames,
                            const LossConfig& cfg) {
  validate_loss_config(cfg);
  const int n = static_cast<int>(track.size());
  if (n < 1) throw std::invalid_argument("total_loss: empty track");
  if (frames.size() != track.size()) {
    throw std::invalid_argument("total_loss: frame/track length mismatch");
  }
  for (const PointFrame& f : frames) {
    if (f.points.empty()) throw std::invalid_argument("total_loss: empty frame");
  }
  for (const BoxState& b : track) {
    validate_box(b);
    if (b.l != track[0].l || b.w != track[0].w || b.h != track[0].h) {
      throw std::invalid_argument("total_loss: track boxes must share one size");
    }
  }

  TrackTerm full;
  full.grad = Eigen::VectorXd::Zero(6 * n);
  const double inv_n = 1.0 / n;

  if (cfg.closeness_weight > 0.0) {
    for (int i = 0; i < n; ++i) {
      const TermGrad t = closeness(frames[i], track[i], cfg.top_k);
      full.value += cfg.closeness_weight * inv_n * t.value;
      full.grad.segment<6>(6 * i) += cfg.closeness_weight * inv_n * t.grad;
    }
  }
  if (cfg.enclosure_weight > 0.0) {
    for (int i = 0; i < n; ++i) {
      const TermGrad t = enclosure(frames[i], track[i], cfg.l1_width);
      full.value += cfg.enclosure_weight * inv_n * t.value;
      full.grad.segment<6>(6 * i) += cfg.enclosure_weight * inv_n * t.grad;
    }
  }
  if (cfg.smoothness_weight > 0.0) {
    const TrackTerm t = smoothness(track);
    full.value += cfg.smoothness_weight * t.value;
    full.grad += cfg.smoothness_weight * t.grad;
  }
  if (cfg.alignment_weight > 0.0) {
    const TrackTerm t = alignment(track);
    full.value += cfg.alignment_weight * t.value;
    full.grad += cfg.alignment_weight * t.grad;
  }

  TrackTerm out;
  out.value = full.value;
  out.grad = detail::project_grad(full.grad, n, cfg.bev_mode);
  return out;
}

/// Value of the total objective without gradient work.
inline double total_loss_value(const Track& track,
                               const std::vector<PointFrame>& frames,
                               const LossConfig& cfg) {
  validate_loss_config(cfg);
  const int n = static_cast<int>(track.size());
  if (n < 1) throw std::invalid_argument("total_loss: empty track");
  if (frames.size() != track.size()) {
    throw std::invalid_argument("total_loss: frame/track length mismatch");
  }
  double value = 0.0;
  const double inv_n = 1.0 / n;
  for (int i = 0; i < n; ++i) {
    if (frames[i].points.empty()) {
      throw std::invalid_argument("total_loss: empty frame");
    }
    if (cfg.closeness_weight > 0.0) {
      value += cfg.closeness_weight * inv_n *
               closeness_value(frames[i], track[i], cfg.top_k);
    }
    if (cfg.enclosure_weight > 0.0) {
      value += cfg.enclosure_weight * inv_n *
               enclosure_value(frames[i], track[i], cfg.l1_width);
    }
  }
  if (cfg.smoothness_weight > 0.0 && n >= 3) {
    double s = 0.0;
    for (int i = 1; i + 1 < n; ++i) s += smoothness_term(track, i);
    value += cfg.smoothness_weight * s / (n - 2);
  }
  if (cfg.alignment_weight > 0.0 && n >= 2) {
    double a = 0.0;
    for (int i = 0; i + 1 < n; ++i) a += alignment_term(track, i);
    value += cfg.alignment_weight * a / (n - 1);
  }
  return value;
}

/// Central-difference gradient of total_loss over the free pose vector.
/// Touches only objective values, never the analytic gradient path.
inline Eigen::VectorXd finite_diff_gradient(const Track& track,
                                            const std::vector<PointFrame>& frames,
                                            const LossConfig& cfg, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff: step must be > 0");
  const Eigen::VectorXd pose0 = track_to_pose(track, cfg.bev_mode);
  Eigen::VectorXd grad(pose0.size());
  Track scratch = track;
  for (Eigen::Index i = 0; i < pose0.size(); ++i) {
    Eigen::VectorXd pose = pose0;
    pose[i] = pose0[i] + step;
    apply_pose(pose, scratch, cfg.bev_mode);
    const double hi = total_loss_value(scratch, frames, cfg);
    pose[i] = pose0[i] - step;
    apply_pose(pose, scratch, cfg.bev_mode);
    const double lo = total_loss_value(scratch, frames, cfg);
    grad[i] = (hi - lo) / (2.0 * step);
  }
  return grad;
}

}  // namespace boxreg
