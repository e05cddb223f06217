#pragma once
/**
 * teleop_sim.hpp - bilateral teleoperation of two task-space point robots.
 *
 * Both robots run the Cartesian impedance law
 *   f   = Kp (x_d - x) + Kv (v_d - v)
 *   tau = Kpr log(q_d * conj(q)) + Kvr (w_d - w)
 * on unit-inertia point dynamics. The remote robot tracks the forward map of
 * the local pose, the local robot is pulled (with gains scaled by
 * local_scale) towards the backward map of the remote pose, and the operator
 * acts on the local robot through an additional wrench. Integration is
 * semi-implicit Euler; references are refreshed every
 * `reference_decimation` steps.
 */

#include "bimap/mapping.hpp"

#include <nlohmann/json.hpp>

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace bimap {

struct RobotState {
  Vec3 x = Vec3::Zero();
  Quat q;
  Vec3 v = Vec3::Zero();
  Vec3 w = Vec3::Zero();
  double m_eff = 1.0;

  bool is_finite() const { return x.allFinite() && q.is_finite() && v.allFinite() && w.allFinite(); }
  double kinetic_energy() const { return 0.5 * m_eff * (v.squaredNorm() + w.squaredNorm()); }
};

struct ImpedanceGains {
  double kp = 600.0;
  double kv = 20.0;
  double kpr = 30.0;
  double kvr = 2.0;

  void validate() const;
  ImpedanceGains scaled(double s) const { return {kp * s, kv * s, kpr * s, kvr * s}; }
};

struct DesiredState {
  Vec3 x = Vec3::Zero();
  Quat q;
  Vec3 v = Vec3::Zero();
  Vec3 w = Vec3::Zero();
};

struct Wrench {
  Vec3 force = Vec3::Zero();
  Vec3 torque = Vec3::Zero();
};

Wrench impedance_force(const RobotState& state, const DesiredState& desired, const ImpedanceGains& gains);

enum class LocalCoupling {
  Bilateral,  ///< local desired = backward map of the remote pose
  Damping,    ///< local robot only feels damping (hand-guiding mode)
};

struct SimConfig {
  double dt = 1e-3;
  /// Total simulated time; <= 0 means "script end + settle_time".
  double duration = 0.0;
  double settle_time = 1.0;
  ImpedanceGains gains_local;
  ImpedanceGains gains_remote;
  /// Gains applied to the operator's hand when following a script.
  ImpedanceGains gains_operator;
  double local_scale = 0.1;
  int reference_decimation = 10;
  double m_eff = 1.0;
  LocalCoupling coupling = LocalCoupling::Bilateral;
  /// Use mapped velocities as v_d, w_d.
  bool velocity_feedforward = true;

  void validate() const;
  static SimConfig from_json(const nlohmann::json& j);
};

struct SimSample {
  double t = 0.0;
  RobotState local;
  RobotState remote;
  DesiredState local_desired;
  DesiredState remote_desired;
  Wrench local_wrench;   ///< impedance wrench on the local robot (without operator)
  Wrench remote_wrench;
  double force_proxy = 0.0;  ///< |local impedance force|
};

struct SimLog {
  std::vector<SimSample> samples;

  void write_csv(std::ostream& out) const;
  static std::string csv_header();
};

class Simulator {
 public:
  Simulator(std::shared_ptr<const PoseMapping> map, SimConfig cfg, const Pose& local_start);

  /// Advances both robots by one dt and appends the new sample to the log.
  /// References are refreshed before the step whenever steps() is a multiple
  /// of reference_decimation.
  const SimSample& step(const Wrench& operator_wrench);

  const RobotState& local() const { return local_; }
  const RobotState& remote() const { return remote_; }
  const DesiredState& local_desired() const { return local_desired_; }
  const DesiredState& remote_desired() const { return remote_desired_; }
  double time() const { return static_cast<double>(steps_) * cfg_.dt; }
  long steps() const { return steps_; }
  /// |local impedance force| of the last step.
  double force_proxy() const { return local_wrench_.force.norm(); }
  const SimLog& log() const { return log_; }
  SimLog take_log() { return std::move(log_); }
  void set_logging(bool on) { logging_ = on; }
  const SimConfig& config() const { return cfg_; }
  const PoseMapping& mapping() const { return *map_; }

  /// Replaces the states (desired references are refreshed on the next step).
  void set_states(const RobotState& local, const RobotState& remote);

 private:
  void update_references();
  SimSample sample() const;

  std::shared_ptr<const PoseMapping> map_;
  SimConfig cfg_;
  RobotState local_;
  RobotState remote_;
  DesiredState local_desired_;
  DesiredState remote_desired_;
  Wrench local_wrench_;
  Wrench remote_wrench_;
  long steps_ = 0;
  bool logging_ = true;
  SimLog log_;
  SimSample last_;
};

struct Waypoint {
  double t = 0.0;
  Pose pose;
};

/// Piecewise interpolated local target trajectory (linear positions, slerp
/// orientations), held at the ends.
class Script {
 public:
  Script() = default;
  explicit Script(std::vector<Waypoint> waypoints);

  bool empty() const { return waypoints_.empty(); }
  double end_time() const { return waypoints_.empty() ? 0.0 : waypoints_.back().t; }
  const std::vector<Waypoint>& waypoints() const { return waypoints_; }

  Pose at(double t) const;
  Twist velocity(double t) const;

  static Script from_json(const nlohmann::json& doc);
  static Script load_file(const std::string& path);
  nlohmann::json to_json() const;

 private:
  std::vector<Waypoint> waypoints_;
};

/// Operator's hand as an impedance pulling the local robot towards `target`.
Wrench hand_wrench(const RobotState& local, const Pose& target, const Twist& target_velocity,
                   const ImpedanceGains& gains);

/// Runs the full simulation with the local robot guided through `script`.
/// With an empty script the robots start at `rest` and receive no input.
SimLog run_scripted(std::shared_ptr<const PoseMapping> map, const SimConfig& cfg, const Script& script,
                    const Pose& rest = {});

}  // namespace bimap
