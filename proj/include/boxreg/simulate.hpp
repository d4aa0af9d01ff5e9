#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "boxreg/geometry.hpp"
#include "boxreg/rng.hpp"

namespace boxreg {

struct TrajectoryConfig {
  int steps = 50;          // T
  double speed = 5.0;      // forward speed (m/s)
  double time_step = 0.1;  // dt (s)
  bool bev_mode = false;   // flat ground: no rolling or pitching
  bool straight = false;   // zero every angle increment (degenerate path)
  double length = 4.7, width = 1.9, height = 1.7;
};

struct SensorModel {
  Vec3 position{0.0, -15.0, 2.0};
  double spacing = 0.1;      // grid spacing on visible faces (m)
  double noise_sigma = 0.01; // additive Gaussian point noise (m)
};

/// Per-parameter perturbation scales for the initial boxes.
struct NoiseScales {
  double x = 0.392, y = 0.124, z = 0.082;
  double roll = 0.083, pitch = 0.1, yaw = 0.18;
};

inline void validate_trajectory_config(const TrajectoryConfig& cfg) {
  if (cfg.steps < 3) throw std::invalid_argument("trajectory steps must be >= 3");
  if (!(cfg.speed > 0.0)) throw std::invalid_argument("speed must be > 0");
  if (!(cfg.time_step > 0.0)) throw std::invalid_argument("time_step must be > 0");
  if (!(cfg.length > 0.0 && cfg.width > 0.0 && cfg.height > 0.0)) {
    throw std::invalid_argument("box extents must be positive");
  }
}

namespace detail {

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace detail

/// Ground-truth trajectory: the yaw rate flips sign with sin(t*2pi/T) and
/// roll/pitch rates with cos(t*2pi/T), so the vehicle sweeps a half turn and
/// returns while rocking, like driving on uneven ground. Each step advances
/// the center speed*dt along the heading the vehicle had at the previous
/// state, so every frame's displacement matches that frame's own heading.
/// Frames are t = 1..T from a start state at the origin with zero angles.
inline Track gen_trajectory(const TrajectoryConfig& cfg) {
  validate_trajectory_config(cfg);
  const int t_total = cfg.steps;
  BoxState box;
  box.l = cfg.length;
  box.w = cfg.width;
  box.h = cfg.height;
  box.z = 0.5 * cfg.height;

  Track track;
  track.reserve(t_total);
  for (int t = 1; t <= t_total; ++t) {
    box.set_center(box.center() +
                   cfg.speed * cfg.time_step * heading_unit(box.pitch, box.yaw));
    const double phase = t * 2.0 * M_PI / t_total;
    if (!cfg.straight) {
      if (!cfg.bev_mode) {
        box.roll += detail::sign(std::cos(phase)) * M_PI / (6.0 * t_total);
        box.pitch += detail::sign(std::cos(phase)) * M_PI / (3.0 * t_total);
      }
      box.yaw += detail::sign(std::sin(phase)) * 2.0 * M_PI / t_total;
    }
    track.push_back(box);
  }
  return track;
}

/// Grid-samples the box faces visible from the sensor (at most three) and
/// adds Gaussian noise in world coordinates.
inline PointFrame gen_vehicle_cloud(const BoxState& box,
                                    const SensorModel& sensor,
                                    std::uint64_t seed) {
  validate_box(box);
  if (!(sensor.spacing > 0.0)) throw std::invalid_argument("spacing must be > 0");
  if (!(sensor.noise_sigma >= 0.0)) throw std::invalid_argument("noise sigma must be >= 0");
  if (point_in_box(sensor.position, box)) {
    throw std::invalid_argument("sensor position is inside the box");
  }

  const Mat3 r = rotation_matrix(box);
  const Vec3 c = box.center();
  const Vec3 half = 0.5 * box.size();
  Rng rng(seed);

  PointFrame frame;
  for (int axis = 0; axis < 3; ++axis) {
    for (double s : {1.0, -1.0}) {
      const Vec3 n = s * r.col(axis);
      const Vec3 face_center = c + half[axis] * n;
      if (n.dot(sensor.position - face_center) <= 0.0) continue;

      const int ua = (axis + 1) % 3;
      const int va = (axis + 2) % 3;
      const double eu = 2.0 * half[ua];
      const double ev = 2.0 * half[va];
      const int nu = std::max(2, static_cast<int>(std::floor(eu / sensor.spacing)) + 1);
      const int nv = std::max(2, static_cast<int>(std::floor(ev / sensor.spacing)) + 1);
      for (int i = 0; i < nu; ++i) {
        for (int j = 0; j < nv; ++j) {
          Vec3 local = Vec3::Zero();
          local[axis] = s * half[axis];
          local[ua] = -0.5 * eu + eu * i / (nu - 1);
          local[va] = -0.5 * ev + ev * j / (nv - 1);
          Vec3 p = c + r * local;
          if (sensor.noise_sigma > 0.0) {
            p += Vec3(rng.normal(0.0, sensor.noise_sigma),
                      rng.normal(0.0, sensor.noise_sigma),
                      rng.normal(0.0, sensor.noise_sigma));
          }
          frame.points.push_back(p);
        }
      }
    }
  }
  return frame;
}

/// Removes the points on one side of a random plane, as a passing occluder
/// would. Removes at most floor(fraction*m) points and always leaves at
/// least 10 survivors.
inline PointFrame occlude(const PointFrame& frame, double fraction,
                          std::uint64_t seed) {
  if (frame.points.empty()) throw std::invalid_argument("occlude: empty frame");
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("occlude: fraction must be in [0, 1)");
  }
  const int m = static_cast<int>(frame.points.size());
  const int removable = std::max(0, m - 10);
  const int target = std::min(static_cast<int>(std::floor(fraction * m)), removable);
  if (target == 0) return frame;

  Rng rng(seed);
  Vec3 dir;
  do {
    dir = Vec3(rng.normal(), rng.normal(), rng.normal());
  } while (dir.norm() < 1e-12);
  dir.normalize();

  // The slab offset is the order statistic that removes exactly `target`
  // points from the far side of the plane.
  std::vector<int> order(m);
  for (int i = 0; i < m; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double ta = dir.dot(frame.points[a]);
    const double tb = dir.dot(frame.points[b]);
    return ta != tb ? ta > tb : a < b;
  });
  std::vector<char> removed(m, 0);
  for (int i = 0; i < target; ++i) removed[order[i]] = 1;

  PointFrame out;
  out.index = frame.index;
  out.points.reserve(m - target);
  for (int i = 0; i < m; ++i) {
    if (!removed[i]) out.points.push_back(frame.points[i]);
  }
  return out;
}

/// Adds independent zero-mean Gaussian noise to each pose parameter. Sizes
/// are untouched.
inline Track perturb_track(const Track& gt, const NoiseScales& scales,
                           std::uint64_t seed) {
  Rng rng(seed);
  Track out = gt;
  for (BoxState& b : out) {
    b.x += scales.x * rng.normal();
    b.y += scales.y * rng.normal();
    b.z += scales.z * rng.normal();
    b.roll += scales.roll * rng.normal();
    b.pitch += scales.pitch * rng.normal();
    b.yaw += scales.yaw * rng.normal();
  }
  return out;
}

/// Greedy farthest point sampling from a given start index. Ties break
/// toward the lowest index; output keeps selection order.
inline PointFrame fps_from(const PointFrame& frame, int n, int start) {
  if (n < 1) throw std::invalid_argument("fps: n must be >= 1");
  const int m = static_cast<int>(frame.points.size());
  if (n >= m) return frame;
  if (start < 0 || start >= m) throw std::invalid_argument("fps: start out of range");

  std::vector<double> min_sq(m);
  std::vector<char> taken(m, 0);
  PointFrame out;
  out.index = frame.index;
  out.points.reserve(n);

  int current = start;
  taken[current] = 1;
  out.points.push_back(frame.points[current]);
  for (int i = 0; i < m; ++i) {
    min_sq[i] = (frame.points[i] - frame.points[current]).squaredNorm();
  }
  while (static_cast<int>(out.points.size()) < n) {
    int best = -1;
    double best_sq = -1.0;
    for (int i = 0; i < m; ++i) {
      if (!taken[i] && min_sq[i] > best_sq) {
        best_sq = min_sq[i];
        best = i;
      }
    }
    taken[best] = 1;
    out.points.push_back(frame.points[best]);
    for (int i = 0; i < m; ++i) {
      min_sq[i] = std::min(min_sq[i],
                           (frame.points[i] - frame.points[best]).squaredNorm());
    }
  }
  return out;
}

/// Farthest point sampling with a seed-chosen start.
inline PointFrame fps(const PointFrame& frame, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("fps: n must be >= 1");
  const int m = static_cast<int>(frame.points.size());
  if (n >= m) return frame;
  const int start = static_cast<int>(Rng(seed).below(m));
  return fps_from(frame, n, start);
}

}  // namespace boxreg
