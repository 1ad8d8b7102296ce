#ifndef P2PL_GEOM_HPP
#define P2PL_GEOM_HPP

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace p2pl {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Vec12 = Eigen::Matrix<double, 12, 1>;
using Mat12 = Eigen::Matrix<double, 12, 12>;
using Mat12x3 = Eigen::Matrix<double, 12, 3>;
using Mat9 = Eigen::Matrix<double, 9, 9>;

/// Flattened rigid transform (R00..R22 row-major, t0, t1, t2). Every 12-row
/// Jacobian in the library uses this ordering.
using GVector = Vec12;

constexpr double kPi = std::numbers::pi;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

/// Axis-angle vector a = theta * w.
struct AxisAngle {
  Vec3 vec = Vec3::Zero();

  AxisAngle() = default;
  explicit AxisAngle(const Vec3& a) : vec(a) {}
  AxisAngle(double theta, const Vec3& axis) : vec(theta * axis.normalized()) {}

  double angle() const { return vec.norm(); }
  /// Unit axis; (1,0,0) for the zero rotation.
  Vec3 axis() const {
    const double theta = angle();
    return theta > 0.0 ? Vec3(vec / theta) : Vec3::UnitX();
  }
};

/// Cross-product matrix: skew(w) * v == w.cross(v).
inline Mat3 skew(const Vec3& w) {
  Mat3 k;
  k << 0.0, -w.z(), w.y(),
       w.z(), 0.0, -w.x(),
       -w.y(), w.x(), 0.0;
  return k;
}

/// Inverse of skew() for the antisymmetric part of m.
inline Vec3 vee(const Mat3& m) {
  return Vec3(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1)) * 0.5;
}

/// Rodrigues' formula I + sin(theta) K + (1 - cos(theta)) K^2.
inline Mat3 rodrigues(const AxisAngle& aa) {
  const double theta = aa.angle();
  if (theta < 1e-12) return Mat3::Identity();
  const Mat3 k = skew(aa.vec / theta);
  return Mat3::Identity() + std::sin(theta) * k + (1.0 - std::cos(theta)) * (k * k);
}

/// Inverse of rodrigues() with theta in [0, pi].
inline AxisAngle log_rotation(const Mat3& r) {
  const Vec3 v = vee(r);  // sin(theta) * w
  const double s = v.norm();
  const double c = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::atan2(s, c);
  if (theta < 1e-12) return AxisAngle(v);
  if (kPi - theta > 1e-3) return AxisAngle(v * (theta / s));

  // Near the antipode sin(theta) carries no precision; read the axis off the
  // symmetric part (R + R^T)/2 = cos(theta) I + (1 - cos(theta)) w w^T.
  const Mat3 wwt = (0.5 * (r + r.transpose()) - c * Mat3::Identity()) / (1.0 - c);
  Eigen::Index k = 0;
  wwt.diagonal().maxCoeff(&k);
  Vec3 w = wwt.col(k) / std::sqrt(std::max(wwt(k, k), 1e-300));
  w.normalize();
  if (w.dot(v) < 0.0) w = -w;
  return AxisAngle(theta * w);
}

inline bool is_rotation(const Mat3& r, double tol = 1e-9) {
  return (r.transpose() * r - Mat3::Identity()).norm() <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

/// Rigid motion p -> R p + t.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  RigidTransform inverse() const {
    RigidTransform inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
  }
};

/// compose(outer, inner) applies inner first: R = Ro Ri, t = Ro ti + to.
inline RigidTransform compose(const RigidTransform& outer, const RigidTransform& inner) {
  RigidTransform out;
  out.rotation = outer.rotation * inner.rotation;
  out.translation = outer.rotation * inner.translation + outer.translation;
  return out;
}

inline GVector to_gvector(const RigidTransform& t) {
  GVector g;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) g(3 * r + c) = t.rotation(r, c);
  g.tail<3>() = t.translation;
  return g;
}

inline RigidTransform from_gvector(const GVector& g) {
  RigidTransform t;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) t.rotation(r, c) = g(3 * r + c);
  t.translation = g.tail<3>();
  return t;
}

/// Rotation matrix stored in a GVector.
inline Mat3 rotation_of(const GVector& g) {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r(i, j) = g(3 * i + j);
  return r;
}

/// Rz(yaw) * Ry(pitch) * Rx(roll), angles in radians.
inline Mat3 euler_zyx_to_matrix(double yaw, double pitch, double roll) {
  return (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
          Eigen::AngleAxisd(roll, Vec3::UnitX()))
      .toRotationMatrix();
}

/// Geodesic angle (radians) between two rotations.
inline double geodesic_angle(const Mat3& a, const Mat3& b) {
  return log_rotation(a.transpose() * b).angle();
}

}  // namespace p2pl

#endif  // P2PL_GEOM_HPP
