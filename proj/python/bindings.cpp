#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <fstream>

#include <nlohmann/json.hpp>

#include "yopinn/checks.hpp"
#include "yopinn/experiment.hpp"

namespace py = pybind11;
namespace ex = yopinn::experiment;
using namespace yopinn;

// Configs and run records cross the boundary as JSON text; the Python side
// decodes them with the json module.

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::span<const double> view(const Array& a) {
  return {a.data(), static_cast<std::size_t>(a.size())};
}

py::tuple eval_fields(const exact::RWParams& p, const Array& x, const Array& t) {
  if (x.size() != t.size()) throw std::invalid_argument("x and t differ in length");
  Array u(x.size()), v(x.size()), L(x.size());
  auto* pu = u.mutable_data();
  auto* pv = v.mutable_data();
  auto* pL = L.mutable_data();
  for (py::ssize_t i = 0; i < x.size(); ++i) {
    const auto f = exact::eval_general_rw(p, x.data()[i], t.data()[i]);
    pu[i] = f.u;
    pv[i] = f.v;
    pL[i] = f.L;
  }
  return py::make_tuple(u, v, L);
}

ex::ExperimentConfig config_of(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  const std::string base = j.contains("preset") ? j.at("preset").get<std::string>()
                                                : std::string("forward-bright-desk");
  return ex::config_from_json(j, ex::preset(base));
}

py::list check_results(const std::vector<checks::CheckResult>& rs) {
  py::list out;
  for (const auto& r : rs) {
    py::dict d;
    d["name"] = r.name;
    d["passed"] = r.passed;
    d["detail"] = r.detail;
    d["seconds"] = r.seconds;
    out.append(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Yajima-Oikawa rogue-wave PINN toolkit";

  py::register_exception<exact::RogueWaveError>(m, "RogueWaveError", PyExc_ValueError);
  py::register_exception<ad::NonFiniteError>(m, "NonFiniteError", PyExc_ArithmeticError);

  py::class_<exact::RWParams>(m, "RWParams")
      .def_readonly("a", &exact::RWParams::a)
      .def_readonly("b", &exact::RWParams::b)
      .def_readonly("k", &exact::RWParams::k)
      .def_readonly("m", &exact::RWParams::m)
      .def_readonly("n", &exact::RWParams::n)
      .def_readonly("sigma", &exact::RWParams::sigma)
      .def_readonly("rho", &exact::RWParams::rho)
      .def_readonly("eta", &exact::RWParams::eta)
      .def_readonly("k_n", &exact::RWParams::k_n)
      .def("__repr__", [](const exact::RWParams& p) {
        return "RWParams(a=" + std::to_string(p.a) + ", b=" + std::to_string(p.b) +
               ", k=" + std::to_string(p.k) + ", m=" + std::to_string(p.m) +
               ", n=" + std::to_string(p.n) + ")";
      });

  m.def("derive_rw_parameters", &exact::derive_rw_parameters, py::arg("a"), py::arg("b"),
        py::arg("k"));
  m.def("bright_params", &exact::bright_params);
  m.def("intermediate_params", &exact::intermediate_params);
  m.def("dark_params", &exact::dark_params);
  m.def("classify", [](double a, double k) { return exact::to_string(exact::classify(a, k)); },
        py::arg("a"), py::arg("k"));
  m.def("eval_rw", &eval_fields, py::arg("params"), py::arg("x"), py::arg("t"),
        "(u, v, L) of the closed-form rogue wave at the given points");

  m.def("preset_names", &ex::preset_names);
  m.def("_preset_json", [](const std::string& name) { return ex::to_json(ex::preset(name)).dump(); });
  m.def("_resolve_json", [](const std::string& text) { return ex::to_json(config_of(text)).dump(); });
  m.def(
      "_run_json",
      [](const std::string& text, const std::filesystem::path& out) {
        const auto c = config_of(text);
        ex::RunRecord r;
        {
          py::gil_scoped_release release;
          r = ex::run(c, out);
        }
        return ex::to_json(r).dump();
      },
      py::arg("config"), py::arg("out_dir"));
  m.def(
      "_sweep_json",
      [](const std::vector<double>& alphas, const std::vector<double>& noises,
         const std::string& text, const std::filesystem::path& out) {
        const auto c = config_of(text);
        std::vector<ex::RunRecord> cells;
        {
          py::gil_scoped_release release;
          cells = ex::run_sweep(alphas, noises, c, out);
        }
        auto arr = nlohmann::json::array();
        for (const auto& r : cells) arr.push_back(ex::to_json(r));
        return arr.dump();
      },
      py::arg("alphas"), py::arg("noises"), py::arg("config"), py::arg("out_dir"));

  m.def(
      "predict",
      [](const std::filesystem::path& checkpoint, const Array& x, const Array& t) {
        std::ifstream is(checkpoint);
        if (!is) throw std::runtime_error("cannot read " + checkpoint.string());
        auto j = nlohmann::json::parse(is);
        const auto params = net::params_from_json(j.contains("network") ? j.at("network") : j);
        return Eigen::MatrixXd(net::predict(params, view(x), view(t)));
      },
      py::arg("checkpoint"), py::arg("x"), py::arg("t"),
      "3 x N array of network outputs (u, v, L) from a params/checkpoint file");

  m.def(
      "relative_l2_error",
      [](const Array& pred, const Array& exact) {
        return ex::relative_l2_error(view(pred), view(exact));
      },
      py::arg("pred"), py::arg("exact"));
  m.def("parameter_relative_error", &ex::parameter_relative_error, py::arg("learned"),
        py::arg("truth"));

  m.def("exact_solution_suite", [] { return check_results(checks::exact_solution_suite()); });
  m.def("property_suite", [] { return check_results(checks::property_suite()); });
}
