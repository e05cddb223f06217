#include "bimap/teleop_sim.hpp"

#include "bimap/diffeo_iter.hpp"
#include "bimap/errors.hpp"
#include "bimap/flow_nn.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>

using namespace bimap;
using bimap::test::Rng;

namespace {

std::shared_ptr<const PoseMapping> identity_map() { return std::make_shared<const DiffeoMap>(); }

std::shared_ptr<const DiffeoMap> valve_iter() {
  static const auto map = std::make_shared<const DiffeoMap>(DiffeoMap::fit(bimap::test::valve_scenario(), IterHyper{}));
  return map;
}

// Remote robot alone: the local robot is held at rest by damping-only coupling.
SimConfig isolated_remote() {
  SimConfig cfg;
  cfg.coupling = LocalCoupling::Damping;
  cfg.velocity_feedforward = false;
  return cfg;
}

double mechanical_energy(const RobotState& s, const DesiredState& d, const ImpedanceGains& g) {
  return s.kinetic_energy() + 0.5 * g.kp * (s.x - d.x).squaredNorm() +
         g.kpr * quat_log(quat_mul(d.q, s.q.conj())).squaredNorm();
}

}  // namespace

TEST_CASE("impedance_force examples") {
  RobotState s;
  DesiredState d;
  ImpedanceGains g;
  Wrench w = impedance_force(s, d, g);
  CHECK(w.force.norm() == 0.0);
  CHECK(w.torque.norm() == 0.0);

  d.x = Vec3(0.01, 0, 0);
  w = impedance_force(s, d, g);
  CHECK((w.force - Vec3(6, 0, 0)).norm() <= 1e-12);
  CHECK(w.torque.norm() == 0.0);

  d = DesiredState{};
  d.q = Quat::from_axis_angle(Vec3::UnitZ(), std::numbers::pi / 2);
  w = impedance_force(s, d, g);
  CHECK(w.force.norm() == 0.0);
  CHECK((w.torque - Vec3(0, 0, 30 * std::numbers::pi / 4)).norm() <= 1e-12);

  d = DesiredState{};
  d.v = Vec3(0.5, 0, 0);
  s.w = Vec3(0, 1, 0);
  w = impedance_force(s, d, g);
  CHECK((w.force - Vec3(10, 0, 0)).norm() <= 1e-12);
  CHECK((w.torque - Vec3(0, -2, 0)).norm() <= 1e-12);
}

TEST_CASE("configuration validation") {
  SimConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.local_scale = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = SimConfig{};
  cfg.local_scale = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = SimConfig{};
  cfg.dt = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = SimConfig{};
  cfg.gains_remote.kv = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  CHECK_THROWS_AS(SimConfig::from_json({{"coupling", "spring"}}), ValidationError);
  CHECK_THROWS_AS(SimConfig::from_json({{"dt", "fast"}}), ParseError);
  const SimConfig parsed = SimConfig::from_json({{"dt", 2e-3}, {"gains_remote", {{"kp", 100.0}}}});
  CHECK(parsed.dt == 2e-3);
  CHECK(parsed.gains_remote.kp == 100.0);
  CHECK(parsed.gains_remote.kv == 20.0);
}

TEST_CASE("equilibrium is preserved exactly") {
  Pose rest{Vec3(0.3, -0.1, 0.2), quat_exp(Vec3(0.1, 0.2, -0.3))};
  Simulator sim(identity_map(), SimConfig{}, rest);
  for (int k = 0; k < 1000; ++k) sim.step({});
  CHECK(sim.local().x == rest.x);
  CHECK(sim.remote().x == rest.x);
  CHECK((sim.local().q.coeffs() - rest.q.coeffs()).norm() <= 1e-15);
  CHECK(sim.local().v.norm() == 0.0);
  CHECK(sim.remote().w.norm() == 0.0);
  CHECK(sim.log().samples.size() == 1001);
}

TEST_CASE("step response follows the analytic second-order solution") {
  const SimConfig cfg = isolated_remote();
  Simulator sim(identity_map(), cfg, Pose{});
  RobotState remote = sim.remote();
  const double step = 0.1;
  remote.x = Vec3(step, 0, 0);
  sim.set_states(sim.local(), remote);

  const double wn = std::sqrt(cfg.gains_remote.kp / cfg.m_eff);
  const double zeta = cfg.gains_remote.kv / (2 * std::sqrt(cfg.gains_remote.kp * cfg.m_eff));
  const double wd = wn * std::sqrt(1 - zeta * zeta);
  auto analytic = [&](double t) {
    return step * std::exp(-zeta * wn * t) * (std::cos(wd * t) + zeta / std::sqrt(1 - zeta * zeta) * std::sin(wd * t));
  };
  auto settling = [&](const std::function<double(double)>& f) {
    double last_out = 0.0;
    for (double t = 0.0; t < 3.0; t += 1e-4) {
      if (std::abs(f(t)) > 0.02 * step) last_out = t;
    }
    return last_out;
  };

  std::vector<double> xs{step};
  double worst = 0.0;
  for (int k = 1; k <= 3000; ++k) {
    sim.step({});
    xs.push_back(sim.remote().x.x());
    worst = std::max(worst, std::abs(xs.back() - analytic(k * cfg.dt)));
    CHECK(sim.local().x.norm() == 0.0);
  }
  CHECK(worst <= 0.02 * step);
  const double ts_sim = settling([&](double t) { return xs[std::min<std::size_t>(xs.size() - 1, std::lround(t / cfg.dt))]; });
  const double ts_ref = settling(analytic);
  CHECK(std::abs(ts_sim - ts_ref) <= 0.05 * ts_ref);
  CHECK(std::abs(xs.back()) <= 0.02 * step);
}

TEST_CASE("mechanical energy never increases while the references are fixed") {
  const SimConfig cfg = isolated_remote();
  Rng rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    Simulator sim(identity_map(), cfg, Pose{rng.vec(-0.2, 0.2), rng.quat()});
    RobotState remote = sim.remote();
    remote.x += rng.vec(-0.1, 0.1);
    remote.q = quat_mul(quat_exp(rng.vec(-0.5, 0.5)), remote.q);
    remote.v = rng.vec(-0.5, 0.5);
    remote.w = rng.vec(-2, 2);
    sim.set_states(sim.local(), remote);
    double prev = mechanical_energy(sim.remote(), sim.remote_desired(), cfg.gains_remote);
    int increases = 0;
    for (int k = 0; k < 3000; ++k) {
      sim.step({});
      const double e = mechanical_energy(sim.remote(), sim.remote_desired(), cfg.gains_remote);
      if (e > prev * (1 + 1e-12) + 1e-15) ++increases;
      prev = e;
    }
    CHECK(increases == 0);
  }
}

TEST_CASE("quaternion states stay unit norm over a million steps") {
  SimConfig cfg;
  Simulator sim(identity_map(), cfg, Pose{});
  sim.set_logging(false);
  double worst = 0.0;
  for (long k = 0; k < 1000000; ++k) {
    Wrench op;
    op.torque = Vec3(std::sin(1e-3 * k), 0.5, std::cos(2e-3 * k));
    sim.step(op);
    worst = std::max({worst, std::abs(sim.local().q.norm() - 1.0), std::abs(sim.remote().q.norm() - 1.0)});
  }
  CHECK(worst <= 1e-9);
  CHECK(sim.steps() == 1000000);
}

TEST_CASE("references are recomputed from the mapping at every refresh step") {
  const auto map = valve_iter();
  const Script script = Script::load_file(bimap::test::data_path("scripts/valve_tour.json"));
  SimConfig cfg;
  cfg.duration = 2.0;
  const SimLog log = run_scripted(map, cfg, script);
  REQUIRE(log.samples.size() == 2001);
  int checked = 0;
  for (std::size_t i = 1; i < log.samples.size(); ++i) {
    const SimSample& s = log.samples[i];
    // The desired poses used in step i were computed after i - 1 steps.
    const SimSample& src = log.samples[(i - 1) / cfg.reference_decimation * cfg.reference_decimation];
    const Pose expect = map->forward({src.local.x, src.local.q});
    CHECK(s.remote_desired.x == expect.x);
    CHECK(s.remote_desired.q.coeffs() == expect.q.coeffs());
    const Pose back = map->backward({src.remote.x, src.remote.q});
    CHECK((s.local_desired.x - back.x).norm() == 0.0);
    ++checked;
  }
  CHECK(checked == 2000);
}

TEST_CASE("constant pull towards a valve converges the remote robot onto its counterpart") {
  const Correspondence corr = bimap::test::valve_scenario();
  const auto map = valve_iter();
  const Pose start{Vec3(0.4, 0.0, 0.45), Quat::identity()};
  for (std::size_t i = 0; i < corr.size(); ++i) {
    const Pose goal = corr.local()[i].pose;
    const Script script({{0.0, start}, {1.0, goal}});
    SimConfig cfg;
    cfg.settle_time = 4.0;
    const SimLog log = run_scripted(map, cfg, script);
    const Vec3 target = corr.remote()[i].pose.x;
    const double travel = (target - map->forward_pos(start.x)).norm();
    CHECK((log.samples.back().remote.x - target).norm() <= 0.02 * travel);
    CHECK(quat_distance(log.samples.back().remote.q, corr.remote()[i].pose.q) <= 0.02);
  }
}

TEST_CASE("valve tour passes every remote valve") {
  const Correspondence corr = bimap::test::valve_scenario();
  const Script script = Script::load_file(bimap::test::data_path("scripts/valve_tour.json"));
  const SimLog log = run_scripted(valve_iter(), SimConfig{}, script);
  for (const auto& o : corr.remote()) {
    double closest = 1e9;
    for (const auto& s : log.samples) closest = std::min(closest, (s.remote.x - o.pose.x).norm());
    CHECK(closest <= 5e-3);
  }
}

TEST_CASE("empty script logs rest states") {
  SimConfig cfg;
  cfg.duration = 0.5;
  const Pose rest{Vec3(0.5, 0.0, 0.4), Quat::identity()};
  const SimLog log = run_scripted(valve_iter(), cfg, Script{}, rest);
  REQUIRE(log.samples.size() == 501);
  const Pose remote = valve_iter()->forward(rest);
  for (const auto& s : log.samples) {
    CHECK((s.local.x - rest.x).norm() <= 1e-9);
    CHECK((s.remote.x - remote.x).norm() <= 1e-9);
    CHECK(s.force_proxy <= 1e-6);
  }
  // Uniform timestep.
  for (std::size_t i = 1; i < log.samples.size(); ++i) {
    CHECK(log.samples[i].t == doctest::Approx(i * cfg.dt).epsilon(1e-12));
  }
}

namespace {

struct SwapRun {
  SimLog iter, flow;
  double bound = 0.0;
};

std::optional<SwapRun> swap_run() {
  const std::string flow_path = bimap::test::data_path("maps/valves_3d.flow.json");
  if (!std::filesystem::exists(flow_path)) return std::nullopt;
  std::shared_ptr<const PoseMapping> flow = load_mapping_file(flow_path);
  const Script script = Script::load_file(bimap::test::data_path("scripts/valve_tour.json"));
  SwapRun r;
  r.iter = run_scripted(valve_iter(), SimConfig{}, script);
  r.flow = run_scripted(flow, SimConfig{}, script);
  r.bound = valve_iter()->report().position_error + dynamic_cast<const FlowMap&>(*flow).position_error() + 1e-2;
  return r;
}

}  // namespace

TEST_CASE("swapping the backend keeps the remote path" * doctest::may_fail()) {
  const auto r = swap_run();
  if (!r) {
    MESSAGE("no pretrained valve flow map");
    return;
  }
  REQUIRE(r->iter.samples.size() == r->flow.samples.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < r->iter.samples.size(); ++i) {
    worst = std::max(worst, (r->iter.samples[i].remote.x - r->flow.samples[i].remote.x).norm());
  }
  MESSAGE("largest remote path gap " << worst << " m, bound " << r->bound << " m");
  CHECK(worst <= r->bound);
}

TEST_CASE("swapping the backend keeps the remote poses at the valves") {
  const auto r = swap_run();
  if (!r) {
    MESSAGE("no pretrained valve flow map");
    return;
  }
  // End of each dwell in the valve tour.
  for (double t : {3.5, 7.0, 10.5, 14.0}) {
    const auto i = static_cast<std::size_t>(std::lround(t / 1e-3));
    const double gap = (r->iter.samples[i].remote.x - r->flow.samples[i].remote.x).norm();
    MESSAGE("gap at t = " << t << ": " << gap << " m");
    CHECK(gap <= r->bound);
  }
}

TEST_CASE("scripts: interpolation and validation") {
  const Pose a{Vec3(0, 0, 0), Quat::identity()};
  const Pose b{Vec3(1, 2, 0), Quat::from_axis_angle(Vec3::UnitZ(), 1.0)};
  const Script s({{1.0, a}, {3.0, b}});
  CHECK((s.at(0.0).x - a.x).norm() == 0.0);
  CHECK((s.at(2.0).x - Vec3(0.5, 1, 0)).norm() <= 1e-15);
  CHECK(quat_distance(s.at(2.0).q, Quat::from_axis_angle(Vec3::UnitZ(), 0.5)) <= 1e-7);
  CHECK((s.at(5.0).x - b.x).norm() == 0.0);
  CHECK((s.velocity(2.0).linear - Vec3(0.5, 1, 0)).norm() <= 1e-15);
  CHECK((s.velocity(2.0).angular - Vec3(0, 0, 0.5)).norm() <= 1e-12);
  CHECK(s.velocity(4.0).linear.norm() == 0.0);

  CHECK_THROWS_AS(Script({{1.0, a}, {1.0, b}}), ValidationError);
  CHECK_THROWS_AS(Script({{2.0, a}, {1.0, b}}), ValidationError);
  Pose bad = a;
  bad.q = Quat(2, 0, 0, 0);
  CHECK_THROWS_AS(Script({{0.0, bad}}), ValidationError);
  CHECK_THROWS_AS(Script::from_json(nlohmann::json::parse(R"({"points": []})")), ParseError);
  CHECK_THROWS_AS(Script::from_json(nlohmann::json::parse(R"({"waypoints": [{"x": [0, 0, 0]}]})")), ParseError);
  CHECK_THROWS_AS(Script::load_file("/nonexistent/script.json"), IoError);

  const Script round = Script::from_json(s.to_json());
  CHECK(round.waypoints().size() == 2);
  CHECK(round.waypoints()[1].pose.x == b.x);
}

TEST_CASE("non-finite state raises a simulation error with the last valid index") {
  Simulator sim(identity_map(), SimConfig{}, Pose{});
  sim.step({});
  sim.step({});
  Wrench op;
  op.force = Vec3(std::numeric_limits<double>::infinity(), 0, 0);
  try {
    sim.step(op);
    FAIL("expected a simulation error");
  } catch (const SimulationError& e) {
    CHECK(e.last_valid_index() == 2);
  }
  CHECK(sim.steps() == 2);
}

TEST_CASE("CSV export has one row per sample") {
  SimConfig cfg;
  cfg.duration = 0.01;
  const SimLog log = run_scripted(identity_map(), cfg, Script{});
  std::ostringstream out;
  log.write_csv(out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == SimLog::csv_header());
  const auto columns = std::count(line.begin(), line.end(), ',') + 1;
  CHECK(columns == 1 + 2 * 13 + 2 * 7 + 1);
  int rows = 0;
  while (std::getline(in, line)) {
    CHECK(std::count(line.begin(), line.end(), ',') + 1 == columns);
    ++rows;
  }
  CHECK(rows == 11);
}
