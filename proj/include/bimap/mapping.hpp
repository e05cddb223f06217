#pragma once
/**
 * mapping.hpp - interface shared by the iterative and flow backends.
 *
 * A PoseMapping provides x' = Phi_x(x) and q' = g(x) * q together with their
 * inverses and the induced velocity maps. Backends supply the position map,
 * its Jacobian and inverse, and the orientation offset g(x) with its spatial
 * derivative; the pose/velocity plumbing here is common to both.
 */

#include "bimap/geom.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <optional>
#include <string>

namespace bimap {

enum class Direction { Forward, Backward };

struct Twist {
  Vec3 linear = Vec3::Zero();
  Vec3 angular = Vec3::Zero();
};

/// Full output bundle of a forward evaluation.
struct MappedState {
  Pose pose;
  Mat3 jacobian = Mat3::Identity();
  std::optional<Twist> twist;
};

using OffsetJacobian = Eigen::Matrix<double, 4, 3>;

class PoseMapping {
 public:
  virtual ~PoseMapping() = default;

  /// "iter" or "flow".
  virtual std::string backend() const = 0;

  virtual Vec3 forward_pos(const Vec3& x) const = 0;
  virtual Vec3 backward_pos(const Vec3& x_prime) const = 0;
  virtual Mat3 jacobian(const Vec3& x) const = 0;
  /// Orientation offset g(x).
  virtual Quat offset(const Vec3& x) const = 0;
  /// dg/dx, columns are the partial derivatives of [w, x, y, z].
  virtual OffsetJacobian offset_jacobian(const Vec3& x) const = 0;

  Quat forward_ori(const Vec3& x, const Quat& q) const { return quat_mul(offset(x), q); }
  /// `x` is the local-frame preimage of the remote position.
  Quat backward_ori(const Vec3& x, const Quat& q_prime) const { return quat_mul(offset(x).conj(), q_prime); }

  virtual Pose forward(const Pose& p) const;
  virtual Pose backward(const Pose& p_prime) const;

  /// Forward: (x, q) is the local pose and (v, w) the local twist; returns the
  /// remote twist. Backward: x is the local preimage, q the remote orientation
  /// and (v, w) the remote twist; returns the local twist.
  Twist map_velocity(const Vec3& x, const Quat& q, const Twist& twist, Direction dir) const;

  MappedState forward_state(const Pose& p, const std::optional<Twist>& twist = std::nullopt) const;

  virtual nlohmann::json to_json() const = 0;
};

std::unique_ptr<PoseMapping> mapping_from_json(const nlohmann::json& doc);
std::unique_ptr<PoseMapping> load_mapping_file(const std::string& path);
void save_mapping_file(const PoseMapping& map, const std::string& path);

}  // namespace bimap
