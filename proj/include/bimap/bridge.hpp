#pragma once
/**
 * bridge.hpp - streaming access to a fitted mapping and a live simulation.
 *
 * Frames are JSON text objects tagged by "type". Poses travel as
 * {"x": [x, y, z], "q": [w, x, y, z]}.
 *
 *   client -> server   {type:"bind", scenario, backend}
 *                      {type:"pose", seq, t, pose}
 *                      {type:"mode", live}
 *   server -> client   {type:"snapshot", objects_local, objects_remote, bounds}
 *                      {type:"mapped", seq, pose, detJ}
 *                      {type:"sim", t, local, remote, force_proxy}
 *                      {type:"error", code, msg}
 *
 * BridgeSession holds all protocol state and is driven by the transport:
 * handle() for every incoming frame, tick() at the configured rate. Pose
 * frames are buffered freshest-wins and answered on the next tick, so the
 * output rate never exceeds the tick rate however fast poses arrive.
 */

#include "bimap/correspondence.hpp"
#include "bimap/mapping.hpp"
#include "bimap/teleop_sim.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace bimap {

/// Resolves scenario and backend ids to loaded artifacts. Scenario "s" lives
/// at <root>/scenarios/s.json; its maps at <root>/maps/s.<backend>.json. A
/// missing iterative map is fitted on first use. Thread-safe.
class MapRegistry {
 public:
  struct Entry {
    std::shared_ptr<const Correspondence> scenario;
    std::shared_ptr<const PoseMapping> map;
  };

  explicit MapRegistry(std::string root = "data");

  /// Registers an in-memory pair, shadowing the files.
  void add(const std::string& scenario_id, std::shared_ptr<const Correspondence> scenario,
           std::shared_ptr<const PoseMapping> map);
  /// nullopt if the scenario or backend cannot be found.
  std::optional<Entry> find(const std::string& scenario_id, const std::string& backend);

 private:
  std::string root_;
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const Correspondence>> scenarios_;
  std::map<std::string, Entry> entries_;  // key "scenario/backend"
};

struct BridgeOptions {
  double tick_hz = 60.0;
  SimConfig sim;
  /// Start every session in live mode.
  bool live = false;
  /// Upper bound on simulated time advanced in one tick.
  double max_catch_up_s = 0.25;
};

class BridgeSession {
 public:
  BridgeSession(std::shared_ptr<MapRegistry> registry, BridgeOptions options);

  /// Processes one client frame received at wall time `now` (seconds) and
  /// returns the immediate replies (snapshot, errors).
  std::vector<nlohmann::json> handle(const std::string& text, double now);
  /// Emits the frames due at wall time `now`: at most one mapped frame and,
  /// in live mode, one sim frame.
  std::vector<nlohmann::json> tick(double now);

  bool bound() const { return entry_.has_value(); }
  bool live() const { return sim_ != nullptr; }
  /// Last accepted sequence number, -1 before the first pose.
  std::int64_t last_seq() const { return last_seq_; }
  /// Estimated server_time - client_time, seconds.
  double clock_offset() const { return clock_offset_; }
  std::uint64_t dropped_frames() const { return dropped_; }
  const Simulator* simulator() const { return sim_.get(); }
  const PoseMapping* mapping() const { return entry_ ? entry_->map.get() : nullptr; }

  static nlohmann::json error_frame(const std::string& code, const std::string& msg);

 private:
  std::vector<nlohmann::json> on_bind(const nlohmann::json& frame, double now);
  std::vector<nlohmann::json> on_pose(const nlohmann::json& frame, double now);
  std::vector<nlohmann::json> on_mode(const nlohmann::json& frame, double now);
  void start_sim(double now);

  std::shared_ptr<MapRegistry> registry_;
  BridgeOptions options_;
  std::optional<MapRegistry::Entry> entry_;
  std::int64_t last_seq_ = -1;
  std::optional<Pose> pending_;
  std::int64_t pending_seq_ = -1;
  std::optional<Pose> operator_pose_;
  double clock_offset_ = 0.0;
  bool have_offset_ = false;
  std::uint64_t dropped_ = 0;
  std::unique_ptr<Simulator> sim_;
  double sim_start_ = 0.0;
};

/// Frame helpers shared with the transport and tests.
nlohmann::json pose_to_frame(const Pose& p);
/// Throws ValidationError on a non-finite or non-unit pose, ParseError on a
/// malformed one.
Pose pose_from_frame(const nlohmann::json& j);

struct ServerOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 8765;  ///< 0 picks a free port
  std::string static_dir;      ///< served over HTTP GET when non-empty
  int threads = 1;
  BridgeOptions bridge;
};

/// WebSocket (any path) plus static HTTP file server.
class BridgeServer {
 public:
  BridgeServer(std::shared_ptr<MapRegistry> registry, ServerOptions options);
  ~BridgeServer();
  BridgeServer(const BridgeServer&) = delete;
  BridgeServer& operator=(const BridgeServer&) = delete;

  /// Binds and starts the worker threads; returns the bound port.
  unsigned short start();
  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// "host:port" -> (host, port); throws ValidationError.
std::pair<std::string, unsigned short> parse_address(const std::string& addr);

}  // namespace bimap
