#include "bimap/teleop_sim.hpp"

#include "bimap/correspondence.hpp"
#include "bimap/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

namespace bimap {

using nlohmann::json;

void ImpedanceGains::validate() const {
  if (!(kp > 0.0 && kv > 0.0 && kpr > 0.0 && kvr > 0.0)) {
    throw ValidationError("impedance gains must all be positive");
  }
}

Wrench impedance_force(const RobotState& state, const DesiredState& desired, const ImpedanceGains& gains) {
  Wrench out;
  out.force = gains.kp * (desired.x - state.x) + gains.kv * (desired.v - state.v);
  out.torque = gains.kpr * quat_log(quat_mul(desired.q, state.q.conj())) + gains.kvr * (desired.w - state.w);
  return out;
}

// ---------------------------------------------------------------------------
// SimConfig

void SimConfig::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ValidationError("dt must be positive");
  if (!std::isfinite(duration)) throw ValidationError("duration must be finite");
  if (!(settle_time >= 0.0)) throw ValidationError("settle_time must be >= 0");
  if (!(local_scale > 0.0 && local_scale <= 1.0)) throw ValidationError("local_scale must lie in (0, 1]");
  if (reference_decimation < 1) throw ValidationError("reference_decimation must be >= 1");
  if (!(m_eff > 0.0)) throw ValidationError("m_eff must be positive");
  gains_local.validate();
  gains_remote.validate();
  gains_operator.validate();
}

namespace {

ImpedanceGains gains_from_json(const json& j, ImpedanceGains g) {
  if (!j.is_object()) throw ParseError("gains must be an object");
  g.kp = j.value("kp", g.kp);
  g.kv = j.value("kv", g.kv);
  g.kpr = j.value("kpr", g.kpr);
  g.kvr = j.value("kvr", g.kvr);
  return g;
}

}  // namespace

SimConfig SimConfig::from_json(const json& j) {
  if (!j.is_object()) throw ParseError("sim config must be an object");
  SimConfig cfg;
  try {
    cfg.dt = j.value("dt", cfg.dt);
    cfg.duration = j.value("duration", cfg.duration);
    cfg.settle_time = j.value("settle_time", cfg.settle_time);
    if (j.contains("gains_local")) cfg.gains_local = gains_from_json(j["gains_local"], cfg.gains_local);
    if (j.contains("gains_remote")) cfg.gains_remote = gains_from_json(j["gains_remote"], cfg.gains_remote);
    if (j.contains("gains_operator")) cfg.gains_operator = gains_from_json(j["gains_operator"], cfg.gains_operator);
    cfg.local_scale = j.value("local_scale", cfg.local_scale);
    cfg.reference_decimation = j.value("reference_decimation", cfg.reference_decimation);
    cfg.m_eff = j.value("m_eff", cfg.m_eff);
    cfg.velocity_feedforward = j.value("velocity_feedforward", cfg.velocity_feedforward);
    const std::string coupling = j.value("coupling", std::string("bilateral"));
    if (coupling == "bilateral") {
      cfg.coupling = LocalCoupling::Bilateral;
    } else if (coupling == "damping") {
      cfg.coupling = LocalCoupling::Damping;
    } else {
      throw ValidationError("unknown coupling '" + coupling + "'");
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("sim config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Simulator

Simulator::Simulator(std::shared_ptr<const PoseMapping> map, SimConfig cfg, const Pose& local_start)
    : map_(std::move(map)), cfg_(std::move(cfg)) {
  if (!map_) throw ValidationError("simulator needs a mapping");
  cfg_.validate();
  local_.x = local_start.x;
  local_.q = local_start.q.normalized();
  local_.m_eff = cfg_.m_eff;
  const Pose remote_start = map_->forward({local_.x, local_.q});
  remote_.x = remote_start.x;
  remote_.q = remote_start.q;
  remote_.m_eff = cfg_.m_eff;
  update_references();
  if (logging_) log_.samples.push_back(sample());
}

void Simulator::set_states(const RobotState& local, const RobotState& remote) {
  local_ = local;
  remote_ = remote;
  update_references();
}

void Simulator::update_references() {
  const Pose remote_ref = map_->forward({local_.x, local_.q});
  remote_desired_.x = remote_ref.x;
  remote_desired_.q = remote_ref.q;
  const Pose local_ref = map_->backward({remote_.x, remote_.q});
  local_desired_.x = local_ref.x;
  local_desired_.q = local_ref.q;
  if (cfg_.velocity_feedforward) {
    const Twist rt = map_->map_velocity(local_.x, local_.q, {local_.v, local_.w}, Direction::Forward);
    remote_desired_.v = rt.linear;
    remote_desired_.w = rt.angular;
    const Twist lt = map_->map_velocity(local_ref.x, remote_.q, {remote_.v, remote_.w}, Direction::Backward);
    local_desired_.v = lt.linear;
    local_desired_.w = lt.angular;
  } else {
    remote_desired_.v.setZero();
    remote_desired_.w.setZero();
    local_desired_.v.setZero();
    local_desired_.w.setZero();
  }
}

namespace {

void integrate(RobotState& s, const Wrench& w, double dt) {
  s.v += w.force / s.m_eff * dt;
  s.w += w.torque / s.m_eff * dt;
  s.x += s.v * dt;
  s.q = quat_mul(quat_exp(0.5 * dt * s.w), s.q).normalized();
}

}  // namespace

const SimSample& Simulator::step(const Wrench& operator_wrench) {
  if (steps_ > 0 && steps_ % cfg_.reference_decimation == 0) update_references();

  remote_wrench_ = impedance_force(remote_, remote_desired_, cfg_.gains_remote);
  const ImpedanceGains local_gains = cfg_.gains_local.scaled(cfg_.local_scale);
  if (cfg_.coupling == LocalCoupling::Bilateral) {
    local_wrench_ = impedance_force(local_, local_desired_, local_gains);
  } else {
    local_wrench_.force = -local_gains.kv * local_.v;
    local_wrench_.torque = -local_gains.kvr * local_.w;
  }
  Wrench local_total = local_wrench_;
  local_total.force += operator_wrench.force;
  local_total.torque += operator_wrench.torque;

  RobotState next_local = local_, next_remote = remote_;
  integrate(next_local, local_total, cfg_.dt);
  integrate(next_remote, remote_wrench_, cfg_.dt);
  if (!next_local.is_finite() || !next_remote.is_finite() || !local_total.force.allFinite() ||
      !local_total.torque.allFinite() || !remote_wrench_.force.allFinite() || !remote_wrench_.torque.allFinite()) {
    std::ostringstream msg;
    msg << "non-finite simulation state at t = " << time() + cfg_.dt;
    throw SimulationError(msg.str(), static_cast<long>(log_.samples.size()) - 1);
  }
  local_ = next_local;
  remote_ = next_remote;
  ++steps_;
  if (logging_) {
    log_.samples.push_back(sample());
    return log_.samples.back();
  }
  last_ = sample();
  return last_;
}

SimSample Simulator::sample() const {
  SimSample s;
  s.t = time();
  s.local = local_;
  s.remote = remote_;
  s.local_desired = local_desired_;
  s.remote_desired = remote_desired_;
  s.local_wrench = local_wrench_;
  s.remote_wrench = remote_wrench_;
  s.force_proxy = local_wrench_.force.norm();
  return s;
}

// ---------------------------------------------------------------------------
// SimLog

std::string SimLog::csv_header() {
  std::string h = "t";
  auto robot = [&h](const std::string& p) {
    for (const char* c : {"x", "y", "z"}) h += "," + p + "_" + c;
    for (const char* c : {"qw", "qx", "qy", "qz"}) h += "," + p + "_" + c;
    for (const char* c : {"vx", "vy", "vz"}) h += "," + p + "_" + c;
    for (const char* c : {"wx", "wy", "wz"}) h += "," + p + "_" + c;
  };
  auto pose = [&h](const std::string& p) {
    for (const char* c : {"x", "y", "z", "qw", "qx", "qy", "qz"}) h += "," + p + "_" + c;
  };
  robot("local");
  robot("remote");
  pose("local_d");
  pose("remote_d");
  h += ",force_proxy";
  return h;
}

void SimLog::write_csv(std::ostream& out) const {
  out << csv_header() << '\n';
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, ",%.10g", v);
    out << buf;
  };
  auto put3 = [&](const Vec3& v) {
    for (int i = 0; i < 3; ++i) put(v(i));
  };
  auto putq = [&](const Quat& q) {
    put(q.w);
    put3(q.v);
  };
  for (const auto& s : samples) {
    std::snprintf(buf, sizeof buf, "%.6f", s.t);
    out << buf;
    for (const RobotState* r : {&s.local, &s.remote}) {
      put3(r->x);
      putq(r->q);
      put3(r->v);
      put3(r->w);
    }
    for (const DesiredState* d : {&s.local_desired, &s.remote_desired}) {
      put3(d->x);
      putq(d->q);
    }
    put(s.force_proxy);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Script

Script::Script(std::vector<Waypoint> waypoints) : waypoints_(std::move(waypoints)) {
  for (std::size_t i = 0; i < waypoints_.size(); ++i) {
    const auto& w = waypoints_[i];
    if (!std::isfinite(w.t) || !w.pose.x.allFinite() || !w.pose.q.is_finite()) {
      throw ValidationError("script waypoint " + std::to_string(i) + " is not finite");
    }
    if (i > 0 && !(w.t > waypoints_[i - 1].t)) {
      throw ValidationError("script timestamps must be strictly increasing (waypoint " + std::to_string(i) + ")");
    }
    if (std::abs(w.pose.q.norm() - 1.0) > 1e-6) {
      throw ValidationError("script waypoint " + std::to_string(i) + " has a non-unit quaternion");
    }
    waypoints_[i].pose.q = w.pose.q.normalized();
  }
}

namespace {

// Index of the segment [i, i+1] containing t, with t strictly inside the range.
std::size_t segment(const std::vector<Waypoint>& w, double t) {
  auto it = std::upper_bound(w.begin(), w.end(), t, [](double v, const Waypoint& p) { return v < p.t; });
  return static_cast<std::size_t>(it - w.begin()) - 1;
}

}  // namespace

Pose Script::at(double t) const {
  if (waypoints_.empty()) return {};
  if (t <= waypoints_.front().t) return waypoints_.front().pose;
  if (t >= waypoints_.back().t) return waypoints_.back().pose;
  const std::size_t i = segment(waypoints_, t);
  const Waypoint& a = waypoints_[i];
  const Waypoint& b = waypoints_[i + 1];
  const double u = (t - a.t) / (b.t - a.t);
  Pose p;
  p.x = (1.0 - u) * a.pose.x + u * b.pose.x;
  p.q = quat_mul(quat_pow(quat_mul(b.pose.q, a.pose.q.conj()), u), a.pose.q);
  return p;
}

Twist Script::velocity(double t) const {
  if (waypoints_.size() < 2 || t < waypoints_.front().t || t >= waypoints_.back().t) return {};
  const std::size_t i = segment(waypoints_, t);
  const Waypoint& a = waypoints_[i];
  const Waypoint& b = waypoints_[i + 1];
  const double span = b.t - a.t;
  Twist tw;
  tw.linear = (b.pose.x - a.pose.x) / span;
  tw.angular = 2.0 * quat_log(quat_mul(b.pose.q, a.pose.q.conj())) / span;
  return tw;
}

Script Script::from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("waypoints") || !doc["waypoints"].is_array()) {
    throw ParseError("script must be an object with a 'waypoints' array");
  }
  std::vector<Waypoint> wps;
  for (std::size_t i = 0; i < doc["waypoints"].size(); ++i) {
    const json& w = doc["waypoints"][i];
    const std::string what = "waypoint " + std::to_string(i);
    if (!w.is_object() || !w.contains("t") || !w["t"].is_number()) throw ParseError(what + ": missing numeric 't'");
    if (!w.contains("x")) throw ParseError(what + ": missing 'x'");
    Waypoint wp;
    wp.t = w["t"].get<double>();
    wp.pose.x = json_to_vec3(w["x"], what + ".x");
    wp.pose.q = w.contains("q") ? json_to_quat(w["q"], what + ".q") : Quat::identity();
    wps.push_back(wp);
  }
  return Script(std::move(wps));
}

Script Script::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open script '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("script '" + path + "': " + e.what());
  }
  return from_json(doc);
}

json Script::to_json() const {
  json wps = json::array();
  for (const auto& w : waypoints_) {
    wps.push_back({{"t", w.t}, {"x", vec3_to_json(w.pose.x)}, {"q", quat_to_json(w.pose.q)}});
  }
  return {{"waypoints", wps}};
}

Wrench hand_wrench(const RobotState& local, const Pose& target, const Twist& target_velocity,
                   const ImpedanceGains& gains) {
  DesiredState d;
  d.x = target.x;
  d.q = target.q;
  d.v = target_velocity.linear;
  d.w = target_velocity.angular;
  return impedance_force(local, d, gains);
}

SimLog run_scripted(std::shared_ptr<const PoseMapping> map, const SimConfig& cfg, const Script& script,
                    const Pose& rest) {
  cfg.validate();
  const Pose start = script.empty() ? rest : script.at(script.waypoints().front().t);
  const double t0 = script.empty() ? 0.0 : script.waypoints().front().t;
  const double duration = cfg.duration > 0.0 ? cfg.duration : script.end_time() - t0 + cfg.settle_time;
  const long steps = std::lround(duration / cfg.dt);
  Simulator sim(std::move(map), cfg, start);
  for (long k = 0; k < steps; ++k) {
    Wrench op;
    if (!script.empty()) {
      const double t = t0 + sim.time();
      op = hand_wrench(sim.local(), script.at(t), script.velocity(t), cfg.gains_operator);
    }
    sim.step(op);
  }
  return sim.take_log();
}

}  // namespace bimap
