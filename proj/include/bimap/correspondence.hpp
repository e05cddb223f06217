#pragma once
/**
 * correspondence.hpp - paired local/remote object poses and the mapping
 * error functionals evaluated on them.
 *
 * Scenario documents are JSON:
 *   { "local":  [ {"id": 1, "position": [x, y, z], "quaternion": [w, x, y, z]}, ... ],
 *     "remote": [ ... same length, matched by index ... ] }
 * Lengths are in meters (or workspace units). Quaternions within 1e-6 of unit
 * norm are renormalized, anything further off is rejected.
 */

#include "bimap/geom.hpp"

#include <nlohmann/json.hpp>

#include <istream>
#include <span>
#include <string>
#include <vector>

namespace bimap {

struct ObjectPose {
  int id = 0;
  Pose pose;
};

struct Bounds {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();

  Vec3 center() const { return 0.5 * (lo + hi); }
  /// Box scaled by `factor` about its center.
  Bounds inflated(double factor) const;
  /// Uniform sample given u in [0,1]^3.
  Vec3 lerp(const Vec3& u) const { return lo + u.cwiseProduct(hi - lo); }
};

class Correspondence {
 public:
  Correspondence() = default;
  /// Validates: equal sizes, N >= 2, distinct local positions, unit quaternions.
  Correspondence(std::vector<ObjectPose> local, std::vector<ObjectPose> remote);

  std::size_t size() const { return local_.size(); }
  const std::vector<ObjectPose>& local() const { return local_; }
  const std::vector<ObjectPose>& remote() const { return remote_; }

  std::vector<Vec3> local_positions() const;
  std::vector<Vec3> remote_positions() const;
  std::vector<Quat> local_orientations() const;
  std::vector<Quat> remote_orientations() const;

  /// Per-pair targets log(canonical(q'_i * conj(q_i))).
  std::vector<RotVec> orientation_offsets() const;

  /// Axis-aligned box of the local positions.
  Bounds local_bounds() const;
  Bounds remote_bounds() const;
  /// Mean of the diagonal extents of both boxes; used as the workspace scale.
  double workspace_scale() const;

 private:
  std::vector<ObjectPose> local_;
  std::vector<ObjectPose> remote_;
};

/// Mean Euclidean distance between mapped and target positions.
double position_error(std::span<const Vec3> mapped, std::span<const Vec3> target);
/// Mean quat_distance between mapped and target orientations.
double orientation_error(std::span<const Quat> mapped, std::span<const Quat> target);

Correspondence load_scenario(std::istream& in);
Correspondence load_scenario_file(const std::string& path);
nlohmann::json scenario_to_json(const Correspondence& corr);

// JSON helpers shared by the other document formats.
Vec3 json_to_vec3(const nlohmann::json& j, const std::string& what);
Quat json_to_quat(const nlohmann::json& j, const std::string& what);
nlohmann::json vec3_to_json(const Vec3& v);
nlohmann::json quat_to_json(const Quat& q);

}  // namespace bimap
