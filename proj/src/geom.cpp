#include "bimap/geom.hpp"

#include <algorithm>
#include <numbers>

namespace bimap {

Quat Quat::from_axis_angle(const Vec3& axis, double angle) {
  const double n = axis.norm();
  if (n == 0.0) return identity();
  return {std::cos(0.5 * angle), std::sin(0.5 * angle) * axis / n};
}

Quat Quat::normalized() const {
  const double n = norm();
  return {w / n, v / n};
}

double arccos_star(double c) {
  c = std::clamp(c, -1.0, 1.0);
  return c < 0.0 ? std::acos(c) - std::numbers::pi : std::acos(c);
}

RotVec quat_log(const Quat& q) {
  const double n = q.v.norm();
  if (n == 0.0) return RotVec::Zero();
  return arccos_star(q.w) * q.v / n;
}

Quat quat_exp(const RotVec& r) {
  const double n = r.norm();
  if (n == 0.0) return Quat::identity();
  return Quat(std::cos(n), std::sin(n) * r / n).normalized();
}

Quat hamilton(const Quat& a, const Quat& b) {
  return {a.w * b.w - a.v.dot(b.v), a.w * b.v + b.w * a.v + a.v.cross(b.v)};
}

Quat quat_mul(const Quat& a, const Quat& b) { return hamilton(a, b).normalized(); }

Quat quat_pow(const Quat& q, double k) {
  if (k == 0.0) return Quat::identity();
  return quat_exp(k * quat_log(q.canonical()));
}

double quat_distance(const Quat& a, const Quat& b) {
  return std::acos(std::min(1.0, std::abs(a.dot(b))));
}

Vec3 angular_velocity(const Quat& q, const Vec4& qdot) {
  Vec4 qd = qdot;
  const Vec4 qc = q.coeffs();
  const double along = qc.dot(qd);
  if (std::abs(along) > 1e-6 * qd.norm()) qd -= along * qc;
  return 2.0 * hamilton(Quat::from_coeffs(qd), q.conj()).v;
}

Vec4 quat_derivative(const Quat& q, const Vec3& omega) {
  return (0.5 * hamilton(Quat(0.0, omega), q).coeffs());
}

Eigen::Matrix<double, 4, 3> quat_exp_jacobian(const RotVec& r) {
  Eigen::Matrix<double, 4, 3> jac;
  const double n = r.norm();
  if (n < 1e-8) {
    // Series limit: d cos|r| = -r^T, d (sin|r|/|r|) r = I up to O(|r|^2).
    jac.row(0) = -r.transpose();
    jac.bottomRows<3>() = Mat3::Identity();
    return jac;
  }
  const Vec3 u = r / n;
  const double s = std::sin(n), c = std::cos(n);
  jac.row(0) = -s * u.transpose();
  jac.bottomRows<3>() = c * u * u.transpose() + (s / n) * (Mat3::Identity() - u * u.transpose());
  return jac;
}

RotVec orientation_offset(const Quat& source, const Quat& target) {
  return quat_log(quat_mul(target, source.conj()).canonical());
}

}  // namespace bimap
