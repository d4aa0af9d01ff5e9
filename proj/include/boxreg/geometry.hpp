#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace boxreg {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vector6d = Eigen::Matrix<double, 6, 1>;

/// Oriented box: center, extents along the box-local axes, and Euler angles.
/// The rotation is composed as R = Rz(yaw) * Ry(pitch) * Rx(roll), so the
/// box-local +x axis (column 0 of R) is the heading.
struct BoxState {
  double x = 0.0, y = 0.0, z = 0.0;
  double l = 1.0, w = 1.0, h = 1.0;
  double roll = 0.0, pitch = 0.0, yaw = 0.0;

  Vec3 center() const { return {x, y, z}; }
  Vec3 size() const { return {l, w, h}; }
  Vec3 angles() const { return {roll, pitch, yaw}; }

  void set_center(const Vec3& c) {
    x = c.x();
    y = c.y();
    z = c.z();
  }
};

inline void validate_box(const BoxState& b) {
  const double vals[] = {b.x, b.y, b.z, b.l, b.w, b.h, b.roll, b.pitch, b.yaw};
  for (double v : vals) {
    if (!std::isfinite(v)) throw std::invalid_argument("box field not finite");
  }
  if (b.l <= 0.0 || b.w <= 0.0 || b.h <= 0.0) {
    throw std::invalid_argument("box extents must be positive");
  }
}

/// Plane a*x + b*y + c*z + d = 0 with (a,b,c) the unit outward normal.
struct Plane {
  double a = 0.0, b = 0.0, c = 0.0, d = 0.0;
  Vec3 normal() const { return {a, b, c}; }
};

/// One timestamped point cloud.
struct PointFrame {
  int index = 0;
  std::vector<Vec3> points;
};

/// Boxes of one object over time; all entries share the same (l, w, h).
using Track = std::vector<BoxState>;

inline Mat3 rotation_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}

inline Mat3 rotation_y(double b) {
  const double c = std::cos(b), s = std::sin(b);
  Mat3 r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}

inline Mat3 rotation_z(double g) {
  const double c = std::cos(g), s = std::sin(g);
  Mat3 r;
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

inline Mat3 rotation_matrix(double roll, double pitch, double yaw) {
  return rotation_z(yaw) * rotation_y(pitch) * rotation_x(roll);
}

inline Mat3 rotation_matrix(const BoxState& b) {
  return rotation_matrix(b.roll, b.pitch, b.yaw);
}

/// Rotation matrix together with its partials in the three angles.
struct RotationDerivs {
  Mat3 r;
  Mat3 d_roll, d_pitch, d_yaw;
};

inline RotationDerivs rotation_derivs(double roll, double pitch, double yaw) {
  const Mat3 rx = rotation_x(roll);
  const Mat3 ry = rotation_y(pitch);
  const Mat3 rz = rotation_z(yaw);
  const double ca = std::cos(roll), sa = std::sin(roll);
  const double cb = std::cos(pitch), sb = std::sin(pitch);
  const double cg = std::cos(yaw), sg = std::sin(yaw);
  Mat3 dx, dy, dz;
  dx << 0, 0, 0, 0, -sa, -ca, 0, ca, -sa;
  dy << -sb, 0, cb, 0, 0, 0, -cb, 0, -sb;
  dz << -sg, -cg, 0, cg, -sg, 0, 0, 0, 0;
  RotationDerivs out;
  out.r = rz * ry * rx;
  out.d_roll = rz * ry * dx;
  out.d_pitch = rz * dy * rx;
  out.d_yaw = dz * ry * rx;
  return out;
}

/// Unit heading vector, the box-local +x axis in world coordinates.
inline Vec3 heading_unit(double pitch, double yaw) {
  return {std::cos(pitch) * std::cos(yaw), std::cos(pitch) * std::sin(yaw),
          -std::sin(pitch)};
}

inline Vec3 heading_unit(const BoxState& b) {
  return heading_unit(b.pitch, b.yaw);
}

inline Vec3 world_to_box(const Vec3& p, const BoxState& b) {
  return rotation_matrix(b).transpose() * (p - b.center());
}

inline Vec3 box_to_world(const Vec3& q, const BoxState& b) {
  return rotation_matrix(b) * q + b.center();
}

/// Boundary points count as inside.
inline bool point_in_box(const Vec3& p, const BoxState& b) {
  const Vec3 q = world_to_box(p, b);
  return std::abs(q.x()) <= 0.5 * b.l && std::abs(q.y()) <= 0.5 * b.w &&
         std::abs(q.z()) <= 0.5 * b.h;
}

/// The six face planes, ordered +x, -x, +y, -y, +z, -z in box axes.
inline std::array<Plane, 6> face_planes(const BoxState& b) {
  const Mat3 r = rotation_matrix(b);
  const Vec3 c = b.center();
  const Vec3 half = 0.5 * b.size();
  std::array<Plane, 6> planes;
  for (int axis = 0; axis < 3; ++axis) {
    for (int side = 0; side < 2; ++side) {
      const double sign = side == 0 ? 1.0 : -1.0;
      const Vec3 n = sign * r.col(axis);
      const Vec3 face_center = c + half[axis] * n;
      planes[2 * axis + side] = {n.x(), n.y(), n.z(), -n.dot(face_center)};
    }
  }
  return planes;
}

/// Unsigned point-plane distance; the plane normal is unit by invariant.
inline double point_plane_distance(const Vec3& p, const Plane& pl) {
  return std::abs(pl.a * p.x() + pl.b * p.y() + pl.c * p.z() + pl.d);
}

/// Per-axis visible-face signs (+1 or -1), picked by which side of the box
/// center the point mass center falls on in box-local coordinates. A mass
/// center exactly on an axis plane breaks the tie toward +axis.
inline std::array<int, 3> visible_faces(const PointFrame& frame,
                                        const BoxState& b) {
  if (frame.points.empty()) {
    throw std::invalid_argument("no points for visibility");
  }
  Vec3 mass = Vec3::Zero();
  for (const Vec3& p : frame.points) mass += p;
  mass /= static_cast<double>(frame.points.size());
  const Vec3 local = world_to_box(mass, b);
  std::array<int, 3> signs;
  for (int axis = 0; axis < 3; ++axis) {
    signs[axis] = local[axis] >= 0.0 ? 1 : -1;
  }
  return signs;
}

/// Maps an angle into [-pi/2, pi/2), identifying angles that differ by pi.
inline double wrap_angle(double theta) {
  double v = std::fmod(theta + M_PI / 2.0, M_PI);
  if (v < 0.0) v += M_PI;
  return v - M_PI / 2.0;
}

inline std::array<Vec3, 8> corners(const BoxState& b) {
  const Mat3 r = rotation_matrix(b);
  const Vec3 c = b.center();
  const Vec3 half = 0.5 * b.size();
  std::array<Vec3, 8> out;
  int k = 0;
  for (int sx : {-1, 1}) {
    for (int sy : {-1, 1}) {
      for (int sz : {-1, 1}) {
        out[k++] = c + r * Vec3(sx * half.x(), sy * half.y(), sz * half.z());
      }
    }
  }
  return out;
}

}  // namespace boxreg
