#include "bimap/bench.hpp"

#include "bimap/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>

namespace bimap {

using nlohmann::json;

LatencyStats measure_latency(const std::function<void(long)>& fn, long calls, long warmup) {
  if (calls < 1) throw ValidationError("latency measurement needs at least one call");
  for (long i = 0; i < warmup; ++i) fn(i);
  std::vector<double> ms(calls);
  using clock = std::chrono::steady_clock;
  for (long i = 0; i < calls; ++i) {
    const auto t0 = clock::now();
    fn(i);
    const auto t1 = clock::now();
    ms[i] = std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  LatencyStats s;
  s.calls = calls;
  s.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(calls);
  auto mid = ms.begin() + calls / 2;
  std::nth_element(ms.begin(), mid, ms.end());
  s.median_ms = *mid;
  if (calls % 2 == 0) s.median_ms = 0.5 * (s.median_ms + *std::max_element(ms.begin(), mid));
  return s;
}

namespace {

json latency_json(const LatencyStats& s) {
  return {{"median_ms", s.median_ms}, {"mean_ms", s.mean_ms}, {"calls", s.calls}};
}

// Keeps benchmark results observable so the timed calls are not elided.
volatile double sink = 0.0;

}  // namespace

json BackendReport::to_json() const {
  return {{"backend", backend},
          {"fit_time_s", fit_time_s},
          {"forward", latency_json(forward)},
          {"backward", latency_json(backward)},
          {"velocity", latency_json(velocity)},
          {"position_error", position_error},
          {"orientation_error", orientation_error}};
}

BackendReport profile_backend(const PoseMapping& map, const Correspondence& corr, double fit_time_s, long calls,
                              long warmup, std::uint64_t seed) {
  BackendReport r;
  r.backend = map.backend();
  r.fit_time_s = fit_time_s;

  std::vector<Vec3> mapped_x;
  std::vector<Quat> mapped_q;
  for (const auto& o : corr.local()) {
    const Pose p = map.forward(o.pose);
    mapped_x.push_back(p.x);
    mapped_q.push_back(p.q);
  }
  r.position_error = position_error(mapped_x, corr.remote_positions());
  r.orientation_error = orientation_error(mapped_q, corr.remote_orientations());

  constexpr int pool = 1024;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  const Bounds box = corr.local_bounds();
  std::vector<Pose> local(pool), remote(pool);
  std::vector<Twist> twists(pool);
  for (int i = 0; i < pool; ++i) {
    local[i].x = box.lerp(Vec3(unif(rng), unif(rng), unif(rng)));
    local[i].q = quat_exp(0.5 * Vec3(sym(rng), sym(rng), sym(rng)));
    remote[i] = map.forward(local[i]);
    twists[i].linear = Vec3(sym(rng), sym(rng), sym(rng));
    twists[i].angular = Vec3(sym(rng), sym(rng), sym(rng));
  }

  r.forward = measure_latency(
      [&](long i) {
        const Pose p = map.forward(local[i % pool]);
        sink = sink + p.x(0) + p.q.w;
      },
      calls, warmup);
  r.backward = measure_latency(
      [&](long i) {
        const Pose p = map.backward(remote[i % pool]);
        sink = sink + p.x(0) + p.q.w;
      },
      calls, warmup);
  r.velocity = measure_latency(
      [&](long i) {
        const Pose& p = local[i % pool];
        const Twist t = map.map_velocity(p.x, p.q, twists[i % pool], Direction::Forward);
        sink = sink + t.linear(0) + t.angular(0);
      },
      calls, warmup);
  return r;
}

std::vector<OrdinalCheck> ordinal_checks(const BackendReport& iter, const BackendReport& flow) {
  std::vector<OrdinalCheck> out;
  auto add = [&out](std::string name, std::string relation, double lhs, double rhs, bool ok) {
    out.push_back({std::move(name), std::move(relation), lhs, rhs, ok});
  };
  add("iter_backward_gt_forward", ">", iter.backward.median_ms, iter.forward.median_ms,
      iter.backward.median_ms > iter.forward.median_ms);
  add("flow_backward_le_2x_forward", "<= 2x", flow.backward.median_ms, flow.forward.median_ms,
      flow.backward.median_ms <= 2.0 * flow.forward.median_ms);
  add("flow_forward_lt_iter_forward", "<", flow.forward.median_ms, iter.forward.median_ms,
      flow.forward.median_ms < iter.forward.median_ms);
  add("iter_velocity_gt_forward", ">", iter.velocity.median_ms, iter.forward.median_ms,
      iter.velocity.median_ms > iter.forward.median_ms);
  return out;
}

bool BenchReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const OrdinalCheck& c) { return c.passed; });
}

json reference_timings() {
  return {{"iter",
           {{"fit_time_s", 0.268},
            {"forward_ms", 6.71},
            {"backward_ms", 20.4},
            {"velocity_ms", 43.4},
            {"position_error_mm", 8e-15},
            {"orientation_error_rad", 3.8e-6}}},
          {"flow",
           {{"fit_time_s", 4.68e3},
            {"forward_ms", 1.83},
            {"backward_ms", 1.93},
            {"velocity_ms", 1.79},
            {"position_error_mm", 0.1},
            {"orientation_error_rad", 1.6e-2}}}};
}

json BenchReport::to_json() const {
  json b = json::array(), c = json::array();
  for (const auto& r : backends) b.push_back(r.to_json());
  for (const auto& k : checks) {
    c.push_back({{"name", k.name}, {"relation", k.relation}, {"lhs_ms", k.lhs}, {"rhs_ms", k.rhs}, {"passed", k.passed}});
  }
  return {{"scenario", scenario}, {"backends", b}, {"ordinal_checks", c}, {"reference", reference_timings()}};
}

void BenchReport::write_table(std::ostream& out) const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-24s", "");
  out << buf;
  for (const auto& r : backends) {
    std::snprintf(buf, sizeof buf, "%16s", r.backend.c_str());
    out << buf;
  }
  out << '\n';
  auto row = [&](const char* label, auto get) {
    std::snprintf(buf, sizeof buf, "%-24s", label);
    out << buf;
    for (const auto& r : backends) {
      std::snprintf(buf, sizeof buf, "%16.4g", get(r));
      out << buf;
    }
    out << '\n';
  };
  row("fit time (s)", [](const BackendReport& r) { return r.fit_time_s; });
  row("forward median (ms)", [](const BackendReport& r) { return r.forward.median_ms; });
  row("backward median (ms)", [](const BackendReport& r) { return r.backward.median_ms; });
  row("velocity median (ms)", [](const BackendReport& r) { return r.velocity.median_ms; });
  row("position error", [](const BackendReport& r) { return r.position_error; });
  row("orientation error (rad)", [](const BackendReport& r) { return r.orientation_error; });
  if (!checks.empty()) out << '\n';
  for (const auto& k : checks) {
    std::snprintf(buf, sizeof buf, "%-4s %-30s %.4g %s %.4g\n", k.passed ? "ok" : "FAIL", k.name.c_str(), k.lhs,
                  k.relation.c_str(), k.rhs);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// Grid

GridSpec GridSpec::around(const Bounds& b, int n, double inflate) {
  if (n < 1) throw ValidationError("grid needs at least one point per axis");
  if (!(inflate > 0.0)) throw ValidationError("grid inflation must be positive");
  GridSpec g;
  const Bounds box = b.inflated(inflate);
  g.lo = box.lo;
  g.hi = box.hi;
  for (int a = 0; a < 3; ++a) g.count[a] = (b.hi(a) - b.lo(a)) > 1e-12 ? n : 1;
  return g;
}

void GridSpec::validate() const {
  if (!lo.allFinite() || !hi.allFinite()) throw ValidationError("grid bounds must be finite");
  for (int a = 0; a < 3; ++a) {
    if (count[a] < 1) throw ValidationError("grid counts must be >= 1");
    if (hi(a) < lo(a)) throw ValidationError("grid upper bound below lower bound");
  }
}

Vec3 GridSpec::point(int i, int j, int k) const {
  const std::array<int, 3> idx{i, j, k};
  Vec3 p;
  for (int a = 0; a < 3; ++a) {
    p(a) = count[a] == 1 ? 0.5 * (lo(a) + hi(a)) : lo(a) + (hi(a) - lo(a)) * idx[a] / (count[a] - 1);
  }
  return p;
}

std::vector<GridPoint> warp_grid(const PoseMapping& map, const GridSpec& spec) {
  spec.validate();
  std::vector<GridPoint> out;
  out.reserve(spec.size());
  for (int k = 0; k < spec.count[2]; ++k) {
    for (int j = 0; j < spec.count[1]; ++j) {
      for (int i = 0; i < spec.count[0]; ++i) {
        GridPoint g;
        g.source = spec.point(i, j, k);
        g.image = map.forward_pos(g.source);
        g.offset = quat_log(map.offset(g.source));
        g.det_j = map.jacobian(g.source).determinant();
        out.push_back(g);
      }
    }
  }
  return out;
}

void write_grid_csv(const std::vector<GridPoint>& grid, std::ostream& out) {
  out << "x,y,z,image_x,image_y,image_z,offset_x,offset_y,offset_z,det_j\n";
  char buf[256];
  for (const auto& g : grid) {
    std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", g.source(0),
                  g.source(1), g.source(2), g.image(0), g.image(1), g.image(2), g.offset(0), g.offset(1), g.offset(2),
                  g.det_j);
    out << buf;
  }
}

}  // namespace bimap
