#include "bimap/mapping.hpp"

#include "bimap/diffeo_iter.hpp"
#include "bimap/errors.hpp"
#include "bimap/flow_nn.hpp"

#include <Eigen/LU>

#include <fstream>

namespace bimap {

Pose PoseMapping::forward(const Pose& p) const { return {forward_pos(p.x), forward_ori(p.x, p.q)}; }

Pose PoseMapping::backward(const Pose& p_prime) const {
  const Vec3 x = backward_pos(p_prime.x);
  return {x, backward_ori(x, p_prime.q)};
}

Twist PoseMapping::map_velocity(const Vec3& x, const Quat& q, const Twist& twist, Direction dir) const {
  const Mat3 jac = jacobian(x);
  const Quat g = offset(x);
  const OffsetJacobian dg = offset_jacobian(x);

  Twist out;
  if (dir == Direction::Forward) {
    out.linear = jac * twist.linear;
    const Quat gdot = Quat::from_coeffs(dg * twist.linear);
    const Vec4 qdot = quat_derivative(q, twist.angular);
    const Quat q_out = quat_mul(g, q);
    const Vec4 qdot_out = hamilton(gdot, q).coeffs() + hamilton(g, Quat::from_coeffs(qdot)).coeffs();
    out.angular = angular_velocity(q_out, qdot_out);
  } else {
    const Eigen::FullPivLU<Mat3> lu(jac);
    if (!lu.isInvertible()) throw NumericalError("singular position Jacobian in backward velocity map");
    out.linear = lu.solve(twist.linear);
    // d conj(g) = conj(dg) along x-dot.
    const Quat gbar_dot = Quat::from_coeffs(dg * out.linear).conj();
    const Quat gbar = g.conj();
    const Vec4 qdot_prime = quat_derivative(q, twist.angular);
    const Quat q_out = quat_mul(gbar, q);
    const Vec4 qdot_out =
        hamilton(gbar_dot, q).coeffs() + hamilton(gbar, Quat::from_coeffs(qdot_prime)).coeffs();
    out.angular = angular_velocity(q_out, qdot_out);
  }
  return out;
}

MappedState PoseMapping::forward_state(const Pose& p, const std::optional<Twist>& twist) const {
  MappedState s;
  s.pose = forward(p);
  s.jacobian = jacobian(p.x);
  if (twist) s.twist = map_velocity(p.x, p.q, *twist, Direction::Forward);
  return s;
}

std::unique_ptr<PoseMapping> mapping_from_json(const nlohmann::json& doc) {
  const std::string backend = doc.value("backend", "");
  if (backend == "iter") return std::make_unique<DiffeoMap>(DiffeoMap::from_json(doc));
  if (backend == "flow") return std::make_unique<FlowMap>(FlowMap::from_json(doc));
  throw ParseError("map document has unknown backend \"" + backend + "\"");
}

std::unique_ptr<PoseMapping> load_mapping_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open map " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("map " + path + ": " + e.what());
  }
  return mapping_from_json(doc);
}

void save_mapping_file(const PoseMapping& map, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write map " + path);
  out << map.to_json().dump(1) << '\n';
  if (!out) throw IoError("failed writing map " + path);
}

}  // namespace bimap
