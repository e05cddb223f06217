#pragma once

#include "bimap/correspondence.hpp"
#include "bimap/geom.hpp"

#include <random>
#include <string>

namespace bimap::test {

inline std::string data_path(const std::string& rel) { return std::string(BIMAP_DATA_DIR) + "/" + rel; }

inline Correspondence planar_scenario() { return load_scenario_file(data_path("scenarios/planar_5.json")); }
inline Correspondence valve_scenario() { return load_scenario_file(data_path("scenarios/valves_3d.json")); }

struct Rng {
  std::mt19937_64 gen;
  explicit Rng(std::uint64_t seed = 42) : gen(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(gen); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen); }
  Vec3 vec(double lo = -1.0, double hi = 1.0) { return {uniform(lo, hi), uniform(lo, hi), uniform(lo, hi)}; }
  Vec3 in_box(const Bounds& b) { return b.lerp(vec(0.0, 1.0)); }
  /// Uniform on S^3.
  Quat quat() {
    Vec4 c(normal(), normal(), normal(), normal());
    return Quat::from_coeffs(c.normalized());
  }
};

inline double quat_gap(const Quat& a, const Quat& b) { return std::min((a.coeffs() - b.coeffs()).norm(), (a.coeffs() + b.coeffs()).norm()); }

}  // namespace bimap::test
