// bimap - fit, benchmark and simulate workspace mappings.

#include "bimap/bench.hpp"
#include "bimap/bridge.hpp"
#include "bimap/config.hpp"
#include "bimap/errors.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

using namespace bimap;

namespace {

enum Exit { kOk = 0, kUsage = 2, kValidation = 3, kNumerical = 4, kIo = 5 };

struct Common {
  std::string scenario;
  std::string backend = "iter";
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool scenario_required) {
  auto* s = cmd->add_option("--scenario", c.scenario, "scenario JSON file");
  if (scenario_required) s->required();
  cmd->add_option("--backend", c.backend, "mapping backend")->check(CLI::IsMember({"iter", "flow"}));
  cmd->add_option("--config", c.config, "run configuration JSON file");
  cmd->add_option("--seed", c.seed, "random seed for flow training");
  cmd->add_option("--out", c.out, "output path");
}

RunConfig load_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : RunConfig::load_file(c.config);
  if (c.seed) cfg.flow.seed = *c.seed;
  return cfg;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Fitted {
  std::shared_ptr<const PoseMapping> map;
  double seconds = 0.0;
};

Fitted fit_backend(const Correspondence& corr, const std::string& backend, const RunConfig& cfg, bool verbose) {
  const auto t0 = std::chrono::steady_clock::now();
  Fitted f;
  if (backend == "iter") {
    f.map = std::make_shared<const DiffeoMap>(DiffeoMap::fit(corr, cfg.iter));
  } else {
    if (verbose) std::cerr << "training flow: " << cfg.flow.loops << " loops\n";
    f.map = std::make_shared<const FlowMap>(FlowMap::train(corr, cfg.flow, cfg.arch));
  }
  f.seconds = seconds_since(t0);
  return f;
}

void write_json(const nlohmann::json& doc, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << doc.dump(1) << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  return out;
}

void print_residuals(const PoseMapping& map, const Correspondence& corr, double seconds) {
  std::vector<Vec3> xs;
  std::vector<Quat> qs;
  for (const auto& o : corr.local()) {
    const Pose p = map.forward(o.pose);
    xs.push_back(p.x);
    qs.push_back(p.q);
  }
  std::printf("backend          %s\n", map.backend().c_str());
  std::printf("fit time (s)     %.4g\n", seconds);
  std::printf("position error   %.6g\n", position_error(xs, corr.remote_positions()));
  std::printf("orientation err  %.6g rad\n", orientation_error(qs, corr.remote_orientations()));
}

// ---------------------------------------------------------------------------

int cmd_fit(const Common& c) {
  const RunConfig cfg = load_config(c);
  const Correspondence corr = load_scenario_file(c.scenario);
  const Fitted f = fit_backend(corr, c.backend, cfg, true);
  print_residuals(*f.map, corr, f.seconds);
  if (!c.out.empty()) {
    save_mapping_file(*f.map, c.out);
    std::printf("wrote            %s\n", c.out.c_str());
  }
  return kOk;
}

struct BenchArgs {
  std::string iter_map, flow_map;
  long calls = 10000;
  long warmup = 1000;
  bool check = false;
};

int cmd_bench(const Common& c, const BenchArgs& b) {
  const RunConfig cfg = load_config(c);
  const Correspondence corr = load_scenario_file(c.scenario);
  BenchReport report;
  report.scenario = c.scenario;
  for (const std::string backend : {"iter", "flow"}) {
    const std::string& path = backend == "iter" ? b.iter_map : b.flow_map;
    Fitted f;
    if (!path.empty()) {
      f.map = load_mapping_file(path);
      if (f.map->backend() != backend) throw ValidationError("'" + path + "' is not a " + backend + " map");
      f.seconds = 0.0;
    } else {
      f = fit_backend(corr, backend, cfg, true);
    }
    report.backends.push_back(profile_backend(*f.map, corr, f.seconds, b.calls, b.warmup));
  }
  report.checks = ordinal_checks(report.backends[0], report.backends[1]);
  report.write_table(std::cout);
  if (!c.out.empty()) write_json(report.to_json(), c.out);
  return b.check && !report.all_passed() ? kNumerical : kOk;
}

struct GridArgs {
  std::string map;
  int n = 5;
  double inflate = 1.0;
  std::vector<double> lo, hi;
};

int cmd_grid(const Common& c, const GridArgs& g) {
  const auto map = load_mapping_file(g.map);
  GridSpec spec;
  if (!c.scenario.empty()) {
    spec = GridSpec::around(load_scenario_file(c.scenario).local_bounds(), g.n, g.inflate);
  } else {
    if (g.lo.size() == 3 && g.hi.size() == 3) {
      spec.lo = Vec3(g.lo[0], g.lo[1], g.lo[2]);
      spec.hi = Vec3(g.hi[0], g.hi[1], g.hi[2]);
    }
    Bounds b{spec.lo, spec.hi};
    spec = GridSpec::around(b, g.n, g.inflate);
  }
  const auto grid = warp_grid(*map, spec);
  if (c.out.empty()) {
    write_grid_csv(grid, std::cout);
  } else {
    auto out = open_out(c.out);
    write_grid_csv(grid, out);
    std::fprintf(stderr, "wrote %zu grid points to %s\n", grid.size(), c.out.c_str());
  }
  return kOk;
}

struct ServeArgs {
  std::string addr = "127.0.0.1:8765";
  double tick_hz = 60.0;
  std::string data_dir = "data";
  std::string static_dir;
  std::string map;
  bool live = false;
};

int serve(const Common& c, const ServeArgs& s, const RunConfig& cfg) {
  auto registry = std::make_shared<MapRegistry>(s.data_dir);
  if (!c.scenario.empty() && !s.map.empty()) {
    auto corr = std::make_shared<const Correspondence>(load_scenario_file(c.scenario));
    std::shared_ptr<const PoseMapping> map = load_mapping_file(s.map);
    const std::string id = std::filesystem::path(c.scenario).stem().string();
    registry->add(id, corr, map);
    std::fprintf(stderr, "registered scenario '%s' with the %s map %s\n", id.c_str(), map->backend().c_str(),
                 s.map.c_str());
  }
  ServerOptions opts;
  std::tie(opts.address, opts.port) = parse_address(s.addr);
  opts.static_dir = s.static_dir;
  opts.bridge.tick_hz = s.tick_hz;
  opts.bridge.sim = cfg.sim;
  opts.bridge.live = s.live;
  BridgeServer server(registry, opts);
  const unsigned short port = server.start();
  std::fprintf(stderr, "bridge listening on ws://%s:%u (tick %.0f Hz%s)\n", opts.address.c_str(), port, s.tick_hz,
               s.live ? ", live" : "");
  server.wait();
  return kOk;
}

struct SimArgs {
  std::string map;
  std::string script;
  bool live = false;
  double proximity = 5e-3;
};

int cmd_sim(const Common& c, const SimArgs& a, const ServeArgs& s) {
  const RunConfig cfg = load_config(c);
  if (a.live) {
    ServeArgs live = s;
    live.map = a.map;
    live.live = true;
    return serve(c, live, cfg);
  }
  std::optional<Correspondence> corr;
  if (!c.scenario.empty()) corr = load_scenario_file(c.scenario);
  std::shared_ptr<const PoseMapping> map;
  if (!a.map.empty()) {
    map = load_mapping_file(a.map);
  } else if (corr) {
    map = fit_backend(*corr, c.backend, cfg, true).map;
  } else {
    throw ValidationError("sim needs --map or --scenario");
  }
  const Script script = a.script.empty() ? Script{} : Script::load_file(a.script);
  Pose rest;
  if (corr) rest.x = corr->local_bounds().center();
  const auto t0 = std::chrono::steady_clock::now();
  const SimLog log = run_scripted(map, cfg.sim, script, rest);
  std::fprintf(stderr, "simulated %zu samples in %.3g s\n", log.samples.size(), seconds_since(t0));
  if (!c.out.empty()) {
    auto out = open_out(c.out);
    log.write_csv(out);
  }
  if (corr && !script.empty()) {
    bool ok = true;
    std::printf("%-6s %-14s %s\n", "object", "closest (m)", "within");
    for (const auto& o : corr->remote()) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& smp : log.samples) best = std::min(best, (smp.remote.x - o.pose.x).norm());
      const bool hit = best <= a.proximity;
      ok = ok && hit;
      std::printf("%-6d %-14.6g %s\n", o.id, best, hit ? "yes" : "no");
    }
    std::printf("remote proximity check (%.3g m): %s\n", a.proximity, ok ? "pass" : "fail");
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bimap: invertible workspace mappings for teleoperation"};
  app.require_subcommand(1);
  Common common;

  auto* fit = app.add_subcommand("fit", "fit or train a mapping on a scenario");
  add_common(fit, common, true);

  BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench", "compare both backends on a scenario");
  add_common(bench, common, true);
  bench->add_option("--iter-map", bench_args.iter_map, "use a saved iterative map instead of fitting");
  bench->add_option("--flow-map", bench_args.flow_map, "use a saved flow map instead of training");
  bench->add_option("--calls", bench_args.calls, "timed calls per operation")->check(CLI::PositiveNumber);
  bench->add_option("--warmup", bench_args.warmup, "untimed warmup calls")->check(CLI::NonNegativeNumber);
  bench->add_flag("--check", bench_args.check, "exit with status 4 when an ordinal check fails");

  GridArgs grid_args;
  auto* grid = app.add_subcommand("grid", "export a warped grid");
  add_common(grid, common, false);
  grid->add_option("--map", grid_args.map, "mapping JSON file")->required();
  grid->add_option("--n", grid_args.n, "points per non-flat axis")->check(CLI::PositiveNumber);
  grid->add_option("--inflate", grid_args.inflate, "box scale about its center")->check(CLI::PositiveNumber);
  grid->add_option("--lo", grid_args.lo, "box lower corner (without --scenario)")->expected(3);
  grid->add_option("--hi", grid_args.hi, "box upper corner (without --scenario)")->expected(3);

  SimArgs sim_args;
  ServeArgs serve_args;
  auto* sim = app.add_subcommand("sim", "run a teleoperation simulation");
  add_common(sim, common, false);
  sim->add_option("--map", sim_args.map, "mapping JSON file (otherwise fitted on --scenario)");
  sim->add_option("--script", sim_args.script, "timed local waypoints JSON file");
  sim->add_flag("--live", sim_args.live, "serve a live session over the bridge instead of a script");
  sim->add_option("--proximity", sim_args.proximity, "remote proximity tolerance (m)");
  sim->add_option("--addr", serve_args.addr, "bridge bind address host:port");
  sim->add_option("--tick-hz", serve_args.tick_hz, "bridge output rate")->check(CLI::PositiveNumber);
  sim->add_option("--data-dir", serve_args.data_dir, "directory with scenarios/ and maps/");
  sim->add_option("--static-dir", serve_args.static_dir, "directory served over HTTP");

  auto* srv = app.add_subcommand("serve", "start the bridge service");
  add_common(srv, common, false);
  srv->add_option("--map", serve_args.map, "preload this map for --scenario");
  srv->add_option("--addr", serve_args.addr, "bind address host:port");
  srv->add_option("--tick-hz", serve_args.tick_hz, "output rate")->check(CLI::PositiveNumber);
  srv->add_option("--data-dir", serve_args.data_dir, "directory with scenarios/ and maps/");
  srv->add_option("--static-dir", serve_args.static_dir, "directory served over HTTP");
  srv->add_flag("--live", serve_args.live, "start sessions in live simulation mode");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*fit) return cmd_fit(common);
    if (*bench) return cmd_bench(common, bench_args);
    if (*grid) return cmd_grid(common, grid_args);
    if (*sim) return cmd_sim(common, sim_args, serve_args);
    if (*srv) return serve(common, serve_args, load_config(common));
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  } catch (const TrainingError& e) {
    std::cerr << "error: " << e.what() << " (epoch " << e.epoch() << ")\n";
    return kNumerical;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  }
  return kUsage;
}
