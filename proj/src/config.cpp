#include "bimap/config.hpp"

#include "bimap/errors.hpp"

#include <fstream>

namespace bimap {

using nlohmann::json;

RunConfig RunConfig::from_json(const json& doc) {
  if (!doc.is_object()) throw ParseError("config must be an object");
  RunConfig cfg;
  try {
    if (doc.contains("iter")) {
      const json& j = doc["iter"];
      cfg.iter.K = j.value("K", cfg.iter.K);
      cfg.iter.mu = j.value("mu", cfg.iter.mu);
      cfg.iter.beta1 = j.value("beta1", cfg.iter.beta1);
      cfg.iter.beta2 = j.value("beta2", cfg.iter.beta2);
    }
    if (doc.contains("flow")) {
      const json& j = doc["flow"];
      TrainConfig& f = cfg.flow;
      if (j.contains("lambda")) f.lambda = j["lambda"].get<std::array<double, 4>>();
      f.alpha = j.value("alpha", f.alpha);
      f.samples = j.value("samples", f.samples);
      f.loops = j.value("loops", f.loops);
      f.learning_rate = j.value("learning_rate", f.learning_rate);
      f.beta1 = j.value("beta1", f.beta1);
      f.beta2 = j.value("beta2", f.beta2);
      f.epsilon = j.value("epsilon", f.epsilon);
      f.seed = j.value("seed", f.seed);
      if (j.contains("arch")) {
        const json& a = j["arch"];
        cfg.arch.coupling_layers = a.value("coupling_layers", cfg.arch.coupling_layers);
        cfg.arch.st_hidden = a.value("st_hidden", cfg.arch.st_hidden);
        cfg.arch.st_depth = a.value("st_depth", cfg.arch.st_depth);
        cfg.arch.ori_hidden = a.value("ori_hidden", cfg.arch.ori_hidden);
        cfg.arch.ori_depth = a.value("ori_depth", cfg.arch.ori_depth);
      }
    }
    if (doc.contains("sim")) cfg.sim = SimConfig::from_json(doc["sim"]);
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  cfg.iter.validate();
  cfg.flow.validate();
  if (cfg.arch.coupling_layers < 1 || cfg.arch.st_hidden < 1 || cfg.arch.st_depth < 1 || cfg.arch.ori_hidden < 1 ||
      cfg.arch.ori_depth < 1) {
    throw ValidationError("flow architecture sizes must be positive");
  }
  return cfg;
}

RunConfig RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("config '" + path + "': " + e.what());
  }
  return from_json(doc);
}

json RunConfig::to_json() const {
  auto gains = [](const ImpedanceGains& g) { return json{{"kp", g.kp}, {"kv", g.kv}, {"kpr", g.kpr}, {"kvr", g.kvr}}; };
  return {{"iter", {{"K", iter.K}, {"mu", iter.mu}, {"beta1", iter.beta1}, {"beta2", iter.beta2}}},
          {"flow",
           {{"lambda", flow.lambda},
            {"alpha", flow.alpha},
            {"samples", flow.samples},
            {"loops", flow.loops},
            {"learning_rate", flow.learning_rate},
            {"beta1", flow.beta1},
            {"beta2", flow.beta2},
            {"epsilon", flow.epsilon},
            {"seed", flow.seed},
            {"arch",
             {{"coupling_layers", arch.coupling_layers},
              {"st_hidden", arch.st_hidden},
              {"st_depth", arch.st_depth},
              {"ori_hidden", arch.ori_hidden},
              {"ori_depth", arch.ori_depth}}}}},
          {"sim",
           {{"dt", sim.dt},
            {"duration", sim.duration},
            {"settle_time", sim.settle_time},
            {"gains_local", gains(sim.gains_local)},
            {"gains_remote", gains(sim.gains_remote)},
            {"gains_operator", gains(sim.gains_operator)},
            {"local_scale", sim.local_scale},
            {"reference_decimation", sim.reference_decimation},
            {"m_eff", sim.m_eff},
            {"coupling", sim.coupling == LocalCoupling::Bilateral ? "bilateral" : "damping"},
            {"velocity_feedforward", sim.velocity_feedforward}}}};
}

}  // namespace bimap
