#pragma once
/**
 * config.hpp - run configuration documents.
 *
 *   { "iter": {"K": 100, "mu": 0.3, "beta1": 0.5, "beta2": 1.0},
 *     "flow": {"lambda": [0.02, 3, 0.1, 9], "alpha": 1, "samples": 200,
 *              "loops": 50000, "learning_rate": 1e-3, "seed": 1,
 *              "arch": {"coupling_layers": 6, "st_hidden": 32, ...}},
 *     "sim":  { see SimConfig::from_json } }
 *
 * Every section and key is optional; missing keys keep their defaults.
 */

#include "bimap/diffeo_iter.hpp"
#include "bimap/flow_nn.hpp"
#include "bimap/teleop_sim.hpp"

#include <nlohmann/json.hpp>

#include <string>

namespace bimap {

struct RunConfig {
  IterHyper iter;
  TrainConfig flow;
  FlowArch arch;
  SimConfig sim;

  /// Throws ParseError on mistyped fields, ValidationError on bad values.
  static RunConfig from_json(const nlohmann::json& doc);
  /// Adds IoError for unreadable files.
  static RunConfig load_file(const std::string& path);
  nlohmann::json to_json() const;
};

}  // namespace bimap
