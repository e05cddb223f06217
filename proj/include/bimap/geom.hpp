#pragma once
/**
 * geom.hpp - unit quaternion and pose algebra shared by both mapping backends.
 *
 * Quaternions are stored as [w, x, y, z]. The logarithm returns the
 * "half-angle" rotation vector: a rotation by angle theta about unit axis n
 * maps to r = (theta / 2) n, and exp(r) = [cos|r|, sin|r| r/|r|].
 */

#include <Eigen/Dense>

#include <cmath>

namespace bimap {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;

/// Rotation vector in the image of the quaternion logarithm (radians).
using RotVec = Eigen::Vector3d;

struct Quat {
  double w = 1.0;
  Vec3 v = Vec3::Zero();

  Quat() = default;
  Quat(double w_, const Vec3& v_) : w(w_), v(v_) {}
  Quat(double w_, double x, double y, double z) : w(w_), v(x, y, z) {}

  static Quat identity() { return {}; }
  /// From [w, x, y, z].
  static Quat from_coeffs(const Vec4& c) { return {c(0), c.tail<3>()}; }
  /// Rotation by `angle` radians about the (normalized) `axis`.
  static Quat from_axis_angle(const Vec3& axis, double angle);

  Vec4 coeffs() const { return {w, v.x(), v.y(), v.z()}; }
  double norm() const { return std::sqrt(w * w + v.squaredNorm()); }
  double dot(const Quat& o) const { return w * o.w + v.dot(o.v); }
  Quat conj() const { return {w, -v}; }
  Quat operator-() const { return {-w, -v}; }
  Quat normalized() const;
  /// Sign representative with w >= 0.
  Quat canonical() const { return w < 0.0 ? -(*this) : *this; }
  bool is_finite() const { return std::isfinite(w) && v.allFinite(); }
};

struct Pose {
  Vec3 x = Vec3::Zero();
  Quat q;
};

/// Modified arc-cosine: arccos(c) - pi for c < 0, so antipodal quaternions
/// share one short-arc rotation vector.
double arccos_star(double c);

RotVec quat_log(const Quat& q);
Quat quat_exp(const RotVec& r);

/// Raw Hamilton product, no renormalization (used for tangent vectors).
Quat hamilton(const Quat& a, const Quat& b);
/// Hamilton product of unit quaternions, renormalized.
Quat quat_mul(const Quat& a, const Quat& b);

/// exp(k * log(canonical(q))): slerp from identity towards q with weight k.
Quat quat_pow(const Quat& q, double k);

/// arccos(|a.b|), in [0, pi/2].
double quat_distance(const Quat& a, const Quat& b);

/// Vector part of 2 qdot * conj(q). A qdot that is not tangent to the sphere
/// at q (|q.qdot| > 1e-6 |qdot|) is projected first.
Vec3 angular_velocity(const Quat& q, const Vec4& qdot);

/// Inverse of angular_velocity: qdot = 0.5 * [0, omega] * q.
Vec4 quat_derivative(const Quat& q, const Vec3& omega);

/// d exp(r) / dr as a 4x3 matrix, rows ordered [w, x, y, z].
Eigen::Matrix<double, 4, 3> quat_exp_jacobian(const RotVec& r);

/// Relative orientation offset log(canonical(target * conj(source))).
RotVec orientation_offset(const Quat& source, const Quat& target);

}  // namespace bimap
