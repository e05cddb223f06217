#include "bimap/bridge.hpp"

#include "bimap/diffeo_iter.hpp"
#include "bimap/errors.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

namespace bimap {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// MapRegistry

MapRegistry::MapRegistry(std::string root) : root_(std::move(root)) {}

void MapRegistry::add(const std::string& scenario_id, std::shared_ptr<const Correspondence> scenario,
                      std::shared_ptr<const PoseMapping> map) {
  const std::string key = scenario_id + "/" + map->backend();
  std::lock_guard lock(mutex_);
  scenarios_[scenario_id] = scenario;
  entries_[key] = {std::move(scenario), std::move(map)};
}

namespace {

bool safe_id(const std::string& id) {
  if (id.empty() || id.size() > 128) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  }) && id.find("..") == std::string::npos;
}

}  // namespace

std::optional<MapRegistry::Entry> MapRegistry::find(const std::string& scenario_id, const std::string& backend) {
  if (!safe_id(scenario_id) || (backend != "iter" && backend != "flow")) return std::nullopt;
  std::lock_guard lock(mutex_);
  const std::string key = scenario_id + "/" + backend;
  if (auto it = entries_.find(key); it != entries_.end()) return it->second;
  try {
    auto& scenario = scenarios_[scenario_id];
    if (!scenario) {
      const fs::path path = fs::path(root_) / "scenarios" / (scenario_id + ".json");
      if (!fs::exists(path)) {
        scenarios_.erase(scenario_id);
        return std::nullopt;
      }
      scenario = std::make_shared<const Correspondence>(load_scenario_file(path.string()));
    }
    std::shared_ptr<const PoseMapping> map;
    const fs::path map_path = fs::path(root_) / "maps" / (scenario_id + "." + backend + ".json");
    if (fs::exists(map_path)) {
      map = load_mapping_file(map_path.string());
      if (map->backend() != backend) return std::nullopt;
    } else if (backend == "iter") {
      map = std::make_shared<const DiffeoMap>(DiffeoMap::fit(*scenario, IterHyper{}));
    } else {
      return std::nullopt;
    }
    Entry e{scenario, std::move(map)};
    entries_[key] = e;
    return e;
  } catch (const std::exception&) {
    scenarios_.erase(scenario_id);
    return std::nullopt;
  }
}

// ---------------------------------------------------------------------------
// Frames

json pose_to_frame(const Pose& p) { return {{"x", vec3_to_json(p.x)}, {"q", quat_to_json(p.q)}}; }

namespace {

// Reads a fixed-length numeric array; null entries (NaN after a browser's
// JSON.stringify) and non-finite numbers are invalid values, anything else
// malformed.
template <int N>
Eigen::Matrix<double, N, 1> read_array(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key) || !j[key].is_array() || j[key].size() != N) {
    throw ParseError(std::string("pose.") + key + " must be an array of " + std::to_string(N) + " numbers");
  }
  Eigen::Matrix<double, N, 1> out;
  for (int i = 0; i < N; ++i) {
    const json& e = j[key][i];
    if (e.is_null()) throw ValidationError(std::string("pose.") + key + " contains a non-finite value");
    if (!e.is_number()) throw ParseError(std::string("pose.") + key + " must contain numbers");
    out(i) = e.get<double>();
    if (!std::isfinite(out(i))) throw ValidationError(std::string("pose.") + key + " contains a non-finite value");
  }
  return out;
}

}  // namespace

Pose pose_from_frame(const json& j) {
  Pose p;
  p.x = read_array<3>(j, "x");
  const Vec4 q = read_array<4>(j, "q");
  if (std::abs(q.norm() - 1.0) > 1e-6) throw ValidationError("pose.q must be a unit quaternion");
  p.q = Quat::from_coeffs(q).normalized();
  return p;
}

json BridgeSession::error_frame(const std::string& code, const std::string& msg) {
  return {{"type", "error"}, {"code", code}, {"msg", msg}};
}

// ---------------------------------------------------------------------------
// BridgeSession

BridgeSession::BridgeSession(std::shared_ptr<MapRegistry> registry, BridgeOptions options)
    : registry_(std::move(registry)), options_(std::move(options)) {
  options_.sim.validate();
  if (!(options_.tick_hz > 0.0)) throw ValidationError("tick rate must be positive");
}

std::vector<json> BridgeSession::handle(const std::string& text, double now) {
  json frame;
  try {
    frame = json::parse(text);
  } catch (const json::parse_error& e) {
    return {error_frame("bad_request", std::string("unparsable frame: ") + e.what())};
  }
  if (!frame.is_object() || !frame.contains("type") || !frame["type"].is_string()) {
    return {error_frame("bad_request", "frame must be an object with a string 'type'")};
  }
  const std::string type = frame["type"].get<std::string>();
  if (type == "bind") return on_bind(frame, now);
  if (!bound()) return {error_frame("not_bound", "send a bind frame first")};
  if (type == "pose") return on_pose(frame, now);
  if (type == "mode") return on_mode(frame, now);
  return {error_frame("bad_request", "unknown frame type '" + type + "'")};
}

std::vector<json> BridgeSession::on_bind(const json& frame, double now) {
  if (bound()) return {error_frame("already_bound", "this connection is already bound")};
  if (!frame.contains("scenario") || !frame["scenario"].is_string() || !frame.contains("backend") ||
      !frame["backend"].is_string()) {
    return {error_frame("bad_request", "bind needs string 'scenario' and 'backend'")};
  }
  const std::string scenario = frame["scenario"].get<std::string>();
  const std::string backend = frame["backend"].get<std::string>();
  auto entry = registry_->find(scenario, backend);
  if (!entry) return {error_frame("not_found", "no " + backend + " map for scenario '" + scenario + "'")};
  entry_ = std::move(entry);

  const Correspondence& corr = *entry_->scenario;
  auto objects = [](const std::vector<ObjectPose>& objs) {
    json arr = json::array();
    for (const auto& o : objs) {
      json e = pose_to_frame(o.pose);
      e["id"] = o.id;
      arr.push_back(e);
    }
    return arr;
  };
  auto box = [](const Bounds& b) { return json{{"lo", vec3_to_json(b.lo)}, {"hi", vec3_to_json(b.hi)}}; };
  json snapshot = {{"type", "snapshot"},
                   {"scenario", scenario},
                   {"backend", backend},
                   {"objects_local", objects(corr.local())},
                   {"objects_remote", objects(corr.remote())},
                   {"bounds", {{"local", box(corr.local_bounds())}, {"remote", box(corr.remote_bounds())}}}};
  if (options_.live) start_sim(now);
  return {snapshot};
}

std::vector<json> BridgeSession::on_pose(const json& frame, double now) {
  if (!frame.contains("seq") || !frame["seq"].is_number_integer()) {
    return {error_frame("bad_request", "pose needs an integer 'seq'")};
  }
  const std::int64_t seq = frame["seq"].get<std::int64_t>();
  if (seq <= last_seq_) {
    ++dropped_;
    return {};
  }
  Pose pose;
  try {
    pose = pose_from_frame(frame.contains("pose") ? frame["pose"] : json());
  } catch (const ValidationError& e) {
    return {error_frame("invalid_pose", e.what())};
  } catch (const ParseError& e) {
    return {error_frame("bad_request", e.what())};
  }
  if (frame.contains("t") && frame["t"].is_number()) {
    const double sample = now - frame["t"].get<double>();
    clock_offset_ = have_offset_ ? 0.9 * clock_offset_ + 0.1 * sample : sample;
    have_offset_ = true;
  }
  if (pending_) ++dropped_;
  last_seq_ = seq;
  pending_ = pose;
  pending_seq_ = seq;
  operator_pose_ = pose;
  return {};
}

std::vector<json> BridgeSession::on_mode(const json& frame, double now) {
  if (!frame.contains("live") || !frame["live"].is_boolean()) {
    return {error_frame("bad_request", "mode needs a boolean 'live'")};
  }
  if (frame["live"].get<bool>()) {
    if (!sim_) start_sim(now);
  } else {
    sim_.reset();
  }
  return {};
}

void BridgeSession::start_sim(double now) {
  Pose start;
  if (operator_pose_) {
    start = *operator_pose_;
  } else {
    start.x = entry_->scenario->local_bounds().center();
  }
  sim_ = std::make_unique<Simulator>(entry_->map, options_.sim, start);
  sim_->set_logging(false);
  sim_start_ = now;
}

std::vector<json> BridgeSession::tick(double now) {
  std::vector<json> out;
  if (!bound()) return out;
  if (pending_) {
    const PoseMapping& map = *entry_->map;
    const Pose mapped = map.forward(*pending_);
    out.push_back({{"type", "mapped"},
                   {"seq", pending_seq_},
                   {"pose", pose_to_frame(mapped)},
                   {"detJ", map.jacobian(pending_->x).determinant()}});
    pending_.reset();
  }
  if (sim_) {
    const double dt = options_.sim.dt;
    long due = static_cast<long>(std::floor((now - sim_start_) / dt)) - sim_->steps();
    const long cap = std::max(1L, static_cast<long>(options_.max_catch_up_s / dt));
    if (due > cap) {
      sim_start_ += static_cast<double>(due - cap) * dt;
      due = cap;
    }
    try {
      for (long k = 0; k < due; ++k) {
        Wrench op;
        if (operator_pose_) op = hand_wrench(sim_->local(), *operator_pose_, {}, options_.sim.gains_operator);
        sim_->step(op);
      }
    } catch (const SimulationError& e) {
      sim_.reset();
      out.push_back(error_frame("sim_failed", e.what()));
      return out;
    }
    const RobotState& l = sim_->local();
    const RobotState& r = sim_->remote();
    out.push_back({{"type", "sim"},
                   {"t", sim_->time()},
                   {"local", pose_to_frame({l.x, l.q})},
                   {"remote", pose_to_frame({r.x, r.q})},
                   {"force_proxy", sim_->force_proxy()}});
  }
  return out;
}

}  // namespace bimap
