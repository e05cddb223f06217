#include "bimap/bench.hpp"
#include "bimap/config.hpp"
#include "bimap/correspondence.hpp"
#include "bimap/diffeo_iter.hpp"
#include "bimap/errors.hpp"
#include "bimap/flow_nn.hpp"
#include "bimap/teleop_sim.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace bimap;

namespace {

using Array4 = Eigen::Vector4d;

Quat to_quat(const Array4& q) { return Quat::from_coeffs(q); }

Pose to_pose(const Vec3& x, const Array4& q) { return {x, to_quat(q)}; }

py::tuple from_pose(const Pose& p) { return py::make_tuple(p.x, p.q.coeffs()); }

Eigen::MatrixXd log_matrix(const SimLog& log) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(log.samples.size()), 16);
  for (std::size_t i = 0; i < log.samples.size(); ++i) {
    const SimSample& s = log.samples[i];
    const auto r = static_cast<Eigen::Index>(i);
    m(r, 0) = s.t;
    m.block<1, 3>(r, 1) = s.local.x.transpose();
    m.block<1, 4>(r, 4) = s.local.q.coeffs().transpose();
    m.block<1, 3>(r, 8) = s.remote.x.transpose();
    m.block<1, 4>(r, 11) = s.remote.q.coeffs().transpose();
    m(r, 15) = s.force_proxy;
  }
  return m;
}

}  // namespace

PYBIND11_MODULE(_bimap, m) {
  m.doc() = "Invertible workspace mappings for teleoperation";

  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

  m.def("quat_log", [](const Array4& q) { return quat_log(to_quat(q)); });
  m.def("quat_exp", [](const Vec3& r) { return quat_exp(r).coeffs(); });
  m.def("quat_distance", [](const Array4& a, const Array4& b) { return quat_distance(to_quat(a), to_quat(b)); });

  py::class_<Correspondence>(m, "Correspondence")
      .def_static("load", &load_scenario_file, py::arg("path"))
      .def("__len__", &Correspondence::size)
      .def_property_readonly("local_positions", &Correspondence::local_positions)
      .def_property_readonly("remote_positions", &Correspondence::remote_positions)
      .def_property_readonly("local_orientations",
                             [](const Correspondence& c) {
                               std::vector<Array4> out;
                               for (const auto& o : c.local()) out.push_back(o.pose.q.coeffs());
                               return out;
                             })
      .def_property_readonly("remote_orientations",
                             [](const Correspondence& c) {
                               std::vector<Array4> out;
                               for (const auto& o : c.remote()) out.push_back(o.pose.q.coeffs());
                               return out;
                             })
      .def_property_readonly("workspace_scale", &Correspondence::workspace_scale);

  py::class_<PoseMapping, std::shared_ptr<PoseMapping>>(m, "Mapping")
      .def_property_readonly("backend", &PoseMapping::backend)
      .def("forward_pos", &PoseMapping::forward_pos, py::arg("x"))
      .def("backward_pos", &PoseMapping::backward_pos, py::arg("x_prime"))
      .def("jacobian", &PoseMapping::jacobian, py::arg("x"))
      .def("offset", [](const PoseMapping& map, const Vec3& x) { return map.offset(x).coeffs(); }, py::arg("x"))
      .def(
          "forward", [](const PoseMapping& map, const Vec3& x, const Array4& q) { return from_pose(map.forward(to_pose(x, q))); },
          py::arg("x"), py::arg("q"))
      .def(
          "backward",
          [](const PoseMapping& map, const Vec3& x, const Array4& q) { return from_pose(map.backward(to_pose(x, q))); },
          py::arg("x_prime"), py::arg("q_prime"))
      .def(
          "map_velocity",
          [](const PoseMapping& map, const Vec3& x, const Array4& q, const Vec3& v, const Vec3& w, bool forward) {
            const Twist t =
                map.map_velocity(x, to_quat(q), {v, w}, forward ? Direction::Forward : Direction::Backward);
            return py::make_tuple(t.linear, t.angular);
          },
          py::arg("x"), py::arg("q"), py::arg("v"), py::arg("w"), py::arg("forward") = true)
      .def("save", [](const PoseMapping& map, const std::string& path) { save_mapping_file(map, path); })
      .def("to_json", [](const PoseMapping& map) { return map.to_json().dump(); });

  m.def(
      "load_mapping", [](const std::string& path) { return std::shared_ptr<PoseMapping>(load_mapping_file(path)); },
      py::arg("path"));

  m.def(
      "fit_iter",
      [](const Correspondence& corr, int K, double mu, double beta1, double beta2) {
        IterHyper h{K, mu, beta1, beta2};
        return std::shared_ptr<PoseMapping>(std::make_shared<DiffeoMap>(DiffeoMap::fit(corr, h)));
      },
      py::arg("correspondence"), py::arg("K") = 100, py::arg("mu") = 0.3, py::arg("beta1") = 0.5,
      py::arg("beta2") = 1.0, py::call_guard<py::gil_scoped_release>());

  m.def(
      "train_flow",
      [](const Correspondence& corr, long loops, int samples, std::uint64_t seed) {
        TrainConfig cfg;
        cfg.loops = loops;
        cfg.samples = samples;
        cfg.seed = seed;
        return std::shared_ptr<PoseMapping>(std::make_shared<FlowMap>(FlowMap::train(corr, cfg)));
      },
      py::arg("correspondence"), py::arg("loops") = 50000, py::arg("samples") = 200, py::arg("seed") = 1,
      py::call_guard<py::gil_scoped_release>());

  m.def(
      "simulate",
      [](std::shared_ptr<PoseMapping> map, const std::string& script_path, const std::string& config_path) {
        const SimConfig cfg = config_path.empty() ? SimConfig{} : RunConfig::load_file(config_path).sim;
        const Script script = script_path.empty() ? Script{} : Script::load_file(script_path);
        return log_matrix(run_scripted(map, cfg, script));
      },
      py::arg("mapping"), py::arg("script") = "", py::arg("config") = "",
      R"(Runs a scripted simulation. Returns an (n, 16) array with columns
t, local x (3), local q (4), remote x (3), remote q (4), force proxy.)");

  m.def(
      "warp_grid",
      [](const PoseMapping& map, const Vec3& lo, const Vec3& hi, int n) {
        const auto grid = warp_grid(map, GridSpec::around({lo, hi}, n));
        Eigen::MatrixXd out(static_cast<Eigen::Index>(grid.size()), 10);
        for (std::size_t i = 0; i < grid.size(); ++i) {
          const auto r = static_cast<Eigen::Index>(i);
          out.block<1, 3>(r, 0) = grid[i].source.transpose();
          out.block<1, 3>(r, 3) = grid[i].image.transpose();
          out.block<1, 3>(r, 6) = grid[i].offset.transpose();
          out(r, 9) = grid[i].det_j;
        }
        return out;
      },
      py::arg("mapping"), py::arg("lo"), py::arg("hi"), py::arg("n") = 5);
}
