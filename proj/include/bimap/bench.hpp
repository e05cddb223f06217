#pragma once
/**
 * bench.hpp - backend comparison (fit time, per-call latencies, residuals)
 * and warped-grid export.
 */

#include "bimap/correspondence.hpp"
#include "bimap/mapping.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace bimap {

struct LatencyStats {
  double median_ms = 0.0;
  double mean_ms = 0.0;
  long calls = 0;
};

/// Times `calls` single invocations of fn(i) after `warmup` untimed ones and
/// returns per-call statistics.
LatencyStats measure_latency(const std::function<void(long)>& fn, long calls = 10000, long warmup = 1000);

struct BackendReport {
  std::string backend;
  double fit_time_s = 0.0;
  LatencyStats forward;
  LatencyStats backward;
  LatencyStats velocity;
  double position_error = 0.0;
  double orientation_error = 0.0;

  nlohmann::json to_json() const;
};

/// Residuals of `map` on the correspondence and latencies at points drawn
/// uniformly in the local bounding box.
BackendReport profile_backend(const PoseMapping& map, const Correspondence& corr, double fit_time_s,
                              long calls = 10000, long warmup = 1000, std::uint64_t seed = 7);

struct OrdinalCheck {
  std::string name;
  std::string relation;
  double lhs = 0.0;
  double rhs = 0.0;
  bool passed = false;
};

/// (a) iter backward > iter forward, (b) flow backward <= 2 flow forward,
/// (c) flow forward < iter forward, (d) iter velocity > iter forward.
std::vector<OrdinalCheck> ordinal_checks(const BackendReport& iter, const BackendReport& flow);

struct BenchReport {
  std::string scenario;
  std::vector<BackendReport> backends;
  std::vector<OrdinalCheck> checks;

  bool all_passed() const;
  nlohmann::json to_json() const;
  void write_table(std::ostream& out) const;
};

/// Reference timings, reported next to measured values.
nlohmann::json reference_timings();

// ---------------------------------------------------------------------------
// Grid export

struct GridSpec {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Ones();
  std::array<int, 3> count{5, 5, 1};

  /// Box `inflate` times the size of `b` around its center with n points per
  /// axis; axes along which `b` is flat get a single point.
  static GridSpec around(const Bounds& b, int n, double inflate = 1.0);
  void validate() const;
  long size() const { return static_cast<long>(count[0]) * count[1] * count[2]; }
  Vec3 point(int i, int j, int k) const;
};

struct GridPoint {
  Vec3 source;
  Vec3 image;
  RotVec offset;
  double det_j = 1.0;
};

std::vector<GridPoint> warp_grid(const PoseMapping& map, const GridSpec& spec);
void write_grid_csv(const std::vector<GridPoint>& grid, std::ostream& out);

}  // namespace bimap
