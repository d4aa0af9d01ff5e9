#pragma once

#include <Eigen/SVD>
#include <array>
#include <optional>
#include <stdexcept>
#include <vector>

#include "boxreg/geometry.hpp"
#include "boxreg/rng.hpp"

namespace boxreg {

using Vec2 = Eigen::Vector2d;

namespace detail {

inline double cross2(const Vec2& a, const Vec2& b) {
  return a.x() * b.y() - a.y() * b.x();
}

// CCW footprint corners of the (x, y, l, w, yaw) projection.
inline std::array<Vec2, 4> footprint(const BoxState& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hl = 0.5 * b.l, hw = 0.5 * b.w;
  const Vec2 center(b.x, b.y);
  const Vec2 ex(c, s), ey(-s, c);
  return {center + hl * ex + hw * ey, center - hl * ex + hw * ey,
          center - hl * ex - hw * ey, center + hl * ex - hw * ey};
}

inline double polygon_area(const std::vector<Vec2>& poly) {
  const int n = static_cast<int>(poly.size());
  if (n < 3) return 0.0;
  double twice = 0.0;
  for (int i = 0; i < n; ++i) {
    twice += cross2(poly[i], poly[(i + 1) % n]);
  }
  return 0.5 * std::abs(twice);
}

// Sutherland-Hodgman clip of a convex subject by a CCW convex clip polygon.
template <std::size_t N>
inline std::vector<Vec2> clip_convex(const std::vector<Vec2>& subject,
                                     const std::array<Vec2, N>& clip) {
  std::vector<Vec2> poly = subject;
  for (std::size_t e = 0; e < N && !poly.empty(); ++e) {
    const Vec2& a = clip[e];
    const Vec2& b = clip[(e + 1) % N];
    const Vec2 edge = b - a;
    std::vector<Vec2> next;
    next.reserve(poly.size() + 1);
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Vec2& p = poly[i];
      const Vec2& q = poly[(i + 1) % poly.size()];
      const double dp = cross2(edge, p - a);
      const double dq = cross2(edge, q - a);
      if (dp >= 0.0) next.push_back(p);
      if ((dp > 0.0 && dq < 0.0) || (dp < 0.0 && dq > 0.0)) {
        next.push_back(p + dp / (dp - dq) * (q - p));
      }
    }
    poly = std::move(next);
  }
  return poly;
}

inline void validate_footprint(const BoxState& b) {
  if (!std::isfinite(b.x) || !std::isfinite(b.y) || !std::isfinite(b.yaw) ||
      !std::isfinite(b.l) || !std::isfinite(b.w) || b.l <= 0.0 || b.w <= 0.0) {
    throw std::invalid_argument("degenerate box footprint");
  }
}

}  // namespace detail

/// Intersection area of the two BEV footprints (exact polygon clipping).
inline double bev_intersection_area(const BoxState& a, const BoxState& b) {
  const auto fa = detail::footprint(a);
  const auto fb = detail::footprint(b);
  const std::vector<Vec2> subject(fa.begin(), fa.end());
  return detail::polygon_area(detail::clip_convex(subject, fb));
}

/// Bird's-eye-view IoU over (x, y, l, w, yaw); z, h, roll, pitch ignored.
inline double iou_2d_bev(const BoxState& a, const BoxState& b) {
  detail::validate_footprint(a);
  detail::validate_footprint(b);
  const double inter = bev_intersection_area(a, b);
  const double area_a = a.l * a.w;
  const double area_b = b.l * b.w;
  const double uni = area_a + area_b - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

/// Monte Carlo 3D IoU: classifies seeded uniform samples from the common
/// bounding volume against both boxes.
inline double iou_3d_monte_carlo(const BoxState& a, const BoxState& b,
                                 int samples, std::uint64_t seed) {
  validate_box(a);
  validate_box(b);
  if (samples < 1) throw std::invalid_argument("iou_3d: samples must be >= 1");
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const BoxState* box : {&a, &b}) {
    for (const Vec3& c : corners(*box)) {
      lo = lo.cwiseMin(c);
      hi = hi.cwiseMax(c);
    }
  }
  Rng rng(seed);
  long in_a = 0, in_b = 0, in_both = 0;
  for (int i = 0; i < samples; ++i) {
    const Vec3 p(rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y()),
                 rng.uniform(lo.z(), hi.z()));
    const bool pa = point_in_box(p, a);
    const bool pb = point_in_box(p, b);
    in_a += pa;
    in_b += pb;
    in_both += pa && pb;
  }
  const long uni = in_a + in_b - in_both;
  if (uni <= 0) return 0.0;
  return std::clamp(static_cast<double>(in_both) / uni, 0.0, 1.0);
}

/// 3D IoU. Exact (BEV clipping x vertical overlap) when neither box rolls or
/// pitches; Monte Carlo otherwise.
inline double iou_3d(const BoxState& a, const BoxState& b,
                     int samples = 200000, std::uint64_t seed = 0) {
  validate_box(a);
  validate_box(b);
  if (a.roll == 0.0 && a.pitch == 0.0 && b.roll == 0.0 && b.pitch == 0.0) {
    const double inter_area = bev_intersection_area(a, b);
    const double z_lo = std::max(a.z - 0.5 * a.h, b.z - 0.5 * b.h);
    const double z_hi = std::min(a.z + 0.5 * a.h, b.z + 0.5 * b.h);
    const double inter = inter_area * std::max(0.0, z_hi - z_lo);
    const double uni = a.l * a.w * a.h + b.l * b.w * b.h - inter;
    return std::clamp(inter / uni, 0.0, 1.0);
  }
  return iou_3d_monte_carlo(a, b, samples, seed);
}

/// Mean absolute pose errors and IoU between two tracks, with the per-frame
/// series kept for plotting. Angle errors are wrapped into [-pi/2, pi/2).
struct MetricsRow {
  double mean_dx = 0.0, mean_dy = 0.0, mean_dz = 0.0;
  double mean_droll = 0.0, mean_dpitch = 0.0, mean_dyaw = 0.0;
  double mean_iou_2d = 0.0, mean_iou_3d = 0.0;
  std::vector<double> dx, dy, dz, droll, dpitch, dyaw, iou_2d, iou_3d;
};

inline MetricsRow param_errors(const Track& est, const Track& gt,
                               int mc_samples = 200000,
                               std::uint64_t seed = 0) {
  if (est.size() != gt.size()) {
    throw std::invalid_argument("param_errors: track length mismatch");
  }
  const int n = static_cast<int>(est.size());
  if (n == 0) throw std::invalid_argument("param_errors: empty tracks");
  MetricsRow row;
  for (int i = 0; i < n; ++i) {
    row.dx.push_back(std::abs(est[i].x - gt[i].x));
    row.dy.push_back(std::abs(est[i].y - gt[i].y));
    row.dz.push_back(std::abs(est[i].z - gt[i].z));
    row.droll.push_back(std::abs(wrap_angle(est[i].roll - gt[i].roll)));
    row.dpitch.push_back(std::abs(wrap_angle(est[i].pitch - gt[i].pitch)));
    row.dyaw.push_back(std::abs(wrap_angle(est[i].yaw - gt[i].yaw)));
    row.iou_2d.push_back(iou_2d_bev(est[i], gt[i]));
    row.iou_3d.push_back(iou_3d(est[i], gt[i], mc_samples, derive_seed(seed, i)));
  }
  const auto mean = [n](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / n;
  };
  row.mean_dx = mean(row.dx);
  row.mean_dy = mean(row.dy);
  row.mean_dz = mean(row.dz);
  row.mean_droll = mean(row.droll);
  row.mean_dpitch = mean(row.dpitch);
  row.mean_dyaw = mean(row.dyaw);
  row.mean_iou_2d = mean(row.iou_2d);
  row.mean_iou_3d = mean(row.iou_3d);
  return row;
}

struct IcpSettings {
  int surface_samples = 400;
  int max_iterations = 50;
  // Per-iteration transform change (meters plus radians) below which the
  // frame is converged. Correspondence noise keeps steps near 1e-4 even at a
  // perfect fit, so a tighter threshold only buys a random walk.
  double convergence_threshold = 1e-3;
};

inline void validate_icp_settings(const IcpSettings& s) {
  if (s.surface_samples < 8) throw std::invalid_argument("icp: samples must be >= 8");
  if (s.max_iterations < 1) throw std::invalid_argument("icp: iterations must be >= 1");
  if (!(s.convergence_threshold > 0.0)) {
    throw std::invalid_argument("icp: threshold must be > 0");
  }
}

struct IcpResult {
  Track track;
  std::vector<int> skipped_frames;  // frames with fewer than 3 points
};

namespace detail {

// Uniform-by-area surface samples in box-local coordinates.
inline std::vector<Vec3> sample_box_surface(const Vec3& size, int count,
                                            Rng& rng) {
  const double hl = 0.5 * size.x(), hw = 0.5 * size.y(), hh = 0.5 * size.z();
  const double areas[3] = {size.y() * size.z(), size.x() * size.z(),
                           size.x() * size.y()};
  const double total = 2.0 * (areas[0] + areas[1] + areas[2]);
  std::vector<Vec3> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    double pick = rng.uniform() * total;
    int axis = 0;
    double sign = 1.0;
    for (int k = 0; k < 3; ++k) {
      if (pick < areas[k]) {
        axis = k;
        sign = 1.0;
        break;
      }
      pick -= areas[k];
      if (pick < areas[k]) {
        axis = k;
        sign = -1.0;
        break;
      }
      pick -= areas[k];
    }
    const double half[3] = {hl, hw, hh};
    Vec3 p;
    p[axis] = sign * half[axis];
    const int ua = (axis + 1) % 3;
    const int va = (axis + 2) % 3;
    p[ua] = rng.uniform(-half[ua], half[ua]);
    p[va] = rng.uniform(-half[va], half[va]);
    out.push_back(p);
  }
  return out;
}

// Least-squares rigid transform source -> target for matched pairs
// (SVD of the cross-covariance, reflection-safe).
inline std::pair<Mat3, Vec3> kabsch(const std::vector<Vec3>& src,
                                    const std::vector<Vec3>& dst) {
  const int n = static_cast<int>(src.size());
  Vec3 mu_s = Vec3::Zero(), mu_d = Vec3::Zero();
  for (int i = 0; i < n; ++i) {
    mu_s += src[i];
    mu_d += dst[i];
  }
  mu_s /= n;
  mu_d /= n;
  Mat3 h = Mat3::Zero();
  for (int i = 0; i < n; ++i) {
    h += (src[i] - mu_s) * (dst[i] - mu_d).transpose();
  }
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0
                ? -1.0
                : 1.0;
  const Mat3 r = svd.matrixV() * d * svd.matrixU().transpose();
  return {r, mu_d - r * mu_s};
}

// Euler angles (roll, pitch, yaw) with R = Rz(yaw) Ry(pitch) Rx(roll).
inline Vec3 euler_from_rotation(const Mat3& r) {
  const double sp = std::clamp(-r(2, 0), -1.0, 1.0);
  const double pitch = std::asin(sp);
  if (std::abs(sp) > 1.0 - 1e-12) {
    // Gimbal lock: only yaw+roll combined is observable; put it all in yaw.
    return {0.0, pitch, std::atan2(-r(0, 1), r(1, 1))};
  }
  return {std::atan2(r(2, 1), r(2, 2)), pitch, std::atan2(r(1, 0), r(0, 0))};
}

}  // namespace detail

/// Point-to-point ICP per frame against points sampled from the box surface.
/// Frames are independent; no trajectory coupling. Boxes of frames with
/// fewer than 3 points are returned unchanged and reported as skipped.
inline IcpResult icp_baseline(const std::vector<PointFrame>& frames,
                              const Track& track0, const IcpSettings& settings,
                              std::uint64_t seed = 0) {
  validate_icp_settings(settings);
  if (frames.size() != track0.size()) {
    throw std::invalid_argument("icp: frame/track length mismatch");
  }
  IcpResult result;
  result.track = track0;

  for (std::size_t i = 0; i < frames.size(); ++i) {
    const PointFrame& frame = frames[i];
    if (frame.points.size() < 3) {
      result.skipped_frames.push_back(static_cast<int>(i));
      continue;
    }
    BoxState& box = result.track[i];
    Rng rng(derive_seed(seed, i));
    const std::vector<Vec3> local =
        detail::sample_box_surface(box.size(), settings.surface_samples, rng);

    Mat3 r_cur = rotation_matrix(box);
    Vec3 c_cur = box.center();
    std::vector<Vec3> src(local.size()), dst(local.size());
    for (int it = 0; it < settings.max_iterations; ++it) {
      for (std::size_t k = 0; k < local.size(); ++k) {
        src[k] = r_cur * local[k] + c_cur;
        double best = std::numeric_limits<double>::infinity();
        for (const Vec3& p : frame.points) {
          const double d = (p - src[k]).squaredNorm();
          if (d < best) {
            best = d;
            dst[k] = p;
          }
        }
      }
      const auto [r_step, t_step] = detail::kabsch(src, dst);
      c_cur = r_step * c_cur + t_step;
      r_cur = r_step * r_cur;
      const double angle =
          std::acos(std::clamp(0.5 * (r_step.trace() - 1.0), -1.0, 1.0));
      if (t_step.norm() + angle < settings.convergence_threshold) break;
    }
    const Vec3 euler = detail::euler_from_rotation(r_cur);
    box.set_center(c_cur);
    box.roll = euler.x();
    box.pitch = euler.y();
    box.yaw = euler.z();
  }
  return result;
}

}  // namespace boxreg
