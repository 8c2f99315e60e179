#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>
#include <variant>

#include "commands.hpp"
#include "stretchtime/data.hpp"
#include "stretchtime/experiment.hpp"
#include "stretchtime/model.hpp"
#include "stretchtime/sype.hpp"
#include "stretchtime/train.hpp"
#include "stretchtime/verify.hpp"

namespace py = pybind11;
namespace st = stretchtime;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const st::sype::Mat2& m) {
  Array out({2, 2});
  auto v = out.mutable_unchecked<2>();
  v(0, 0) = m.m00;
  v(0, 1) = m.m01;
  v(1, 0) = m.m10;
  v(1, 1) = m.m11;
  return out;
}

st::sype::Mat2 to_mat2(const Array& a) {
  if (a.ndim() != 2 || a.shape(0) != 2 || a.shape(1) != 2) throw py::value_error("expected a 2x2 array");
  const auto v = a.unchecked<2>();
  return {v(0, 0), v(0, 1), v(1, 0), v(1, 1)};
}

Array matrix_to_array(const st::data::Matrix& m) {
  Array out({m.rows, m.cols});
  std::copy(m.values.begin(), m.values.end(), out.mutable_data());
  return out;
}

Array tensor_to_array(const st::numcore::Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

st::numcore::Tensor array_to_tensor(const Array& a) {
  st::numcore::Shape shape(a.shape(), a.shape() + a.ndim());
  return st::numcore::Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

// A forecaster built from an experiment config, with fresh or loaded weights.
struct Model {
  st::model::ModelConfig config;
  st::model::StretchTimeParams params;
};

}  // namespace

PYBIND11_MODULE(_stretchtime, m) {
  m.doc() = "Symplectic positional embeddings and the StretchTime forecaster";

  py::class_<st::sype::HamiltonianBand>(m, "HamiltonianBand")
      .def(py::init([](double alpha, double beta, double gamma) {
             return st::sype::HamiltonianBand{alpha, beta, gamma};
           }),
           py::arg("alpha") = 0.0, py::arg("beta") = 0.0, py::arg("gamma") = 0.0)
      .def_static("isotropic", &st::sype::HamiltonianBand::isotropic, py::arg("theta"))
      .def_static("from_coefficients", &st::sype::HamiltonianBand::from_coefficients, py::arg("a"), py::arg("b"),
                  py::arg("c"))
      .def_readwrite("alpha", &st::sype::HamiltonianBand::alpha)
      .def_readwrite("beta", &st::sype::HamiltonianBand::beta)
      .def_readwrite("gamma", &st::sype::HamiltonianBand::gamma)
      .def_property_readonly("a", &st::sype::HamiltonianBand::a)
      .def_property_readonly("b", &st::sype::HamiltonianBand::b)
      .def_property_readonly("c", &st::sype::HamiltonianBand::c)
      .def_property_readonly("omega", &st::sype::HamiltonianBand::omega)
      .def("__repr__", [](const st::sype::HamiltonianBand& b) {
        std::ostringstream s;
        s << "HamiltonianBand(alpha=" << b.alpha << ", beta=" << b.beta << ", gamma=" << b.gamma << ")";
        return s.str();
      });

  m.def("generator", [](const st::sype::HamiltonianBand& b) { return to_array(st::sype::generator(b)); },
        py::arg("band"), "A = J K for the band's Hamiltonian K.");
  m.def("flow_matrix", [](const st::sype::HamiltonianBand& b, double t) { return to_array(st::sype::flow_matrix(b, t)); },
        py::arg("band"), py::arg("t"), "Closed-form S(t) = exp(t J K).");
  m.def("expm_oracle", [](const Array& a, double t) { return to_array(st::sype::expm_oracle(to_mat2(a), t)); },
        py::arg("matrix"), py::arg("t") = 1.0, "exp(t M) by scaling and squaring.");
  m.def("rope_flow", [](double omega, double t) { return to_array(st::sype::rope_flow(omega, t)); }, py::arg("omega"),
        py::arg("t"));
  m.def("rotary_bands", &st::sype::rotary_bands, py::arg("head_dim"));
  m.def(
      "rope_feasibility_check",
      [](const std::vector<double>& tau, double omega0, double tol) -> py::object {
        const auto r = st::sype::rope_feasibility_check(tau, omega0, tol);
        if (const auto* f = std::get_if<st::sype::Feasible>(&r)) return py::make_tuple("feasible", f->theta);
        const auto& w = std::get<st::sype::Infeasible>(r);
        return py::make_tuple("infeasible", w.first, w.second);
      },
      py::arg("tau"), py::arg("omega0"), py::arg("tol") = 1e-12,
      "('feasible', theta) or ('infeasible', t, t + 1) with 1-based increment indices.");

  m.def("oscillating_warp_grid", &st::data::oscillating_warp_grid, py::arg("length"), py::arg("warp_amplitude") = 0.5,
        py::arg("period") = 500.0);
  m.def(
      "generate",
      [](const std::string& config_text) {
        const auto c = st::experiment::parse_config(config_text, "<python>");
        return matrix_to_array(st::data::generate_warped_seasonal(c.synthetic).raw);
      },
      py::arg("config") = "", "Synthetic series (length, channels) from `synthetic.*` config keys.");

  m.def("config_keys", &st::experiment::config_keys);
  m.def(
      "resolve_config",
      [](const std::string& text) {
        return st::experiment::to_text(st::experiment::parse_config(text, "<python>"));
      },
      py::arg("config") = "", "Every key after applying `config` over the defaults.");

  py::class_<Model>(m, "Model")
      .def(py::init([](const std::string& text, std::uint64_t seed) {
             const auto c = st::experiment::parse_config(text, "<python>");
             return Model{c.model, st::model::init_params(c.model, seed)};
           }),
           py::arg("config") = "", py::arg("seed") = 2026)
      .def_static(
          "load",
          [](const std::filesystem::path& path) {
            auto ck = st::experiment::read_checkpoint(path);
            return Model{ck.config, std::move(ck.params)};
          },
          py::arg("path"))
      .def_property_readonly("lookback", [](const Model& s) { return s.config.lookback; })
      .def_property_readonly("horizon", [](const Model& s) { return s.config.horizon; })
      .def_property_readonly("channels", [](const Model& s) { return s.config.channels; })
      .def_property_readonly("parameter_count", [](const Model& s) { return st::model::count_params(s.config); })
      .def(
          "forward",
          [](const Model& s, const Array& x) {
            if (x.ndim() != 2) throw py::value_error("expected a (lookback, channels) array");
            st::numcore::NoGradScope no_grad;
            return tensor_to_array(st::model::forward(array_to_tensor(x), s.params, s.config));
          },
          py::arg("x"), "Forecast (horizon, channels) for one raw window.")
      .def("parameters", [](const Model& s) {
        py::dict out;
        for (const auto& [name, t] : s.params.named_parameters(s.config)) out[py::str(name)] = tensor_to_array(t);
        return out;
      });

  m.def(
      "train",
      [](const std::string& text, const std::filesystem::path& out_dir) {
        auto c = st::experiment::parse_config(text, "<python>");
        const auto ds = st::experiment::resolve_dataset(c);
        c.model.channels = ds.channels();
        std::ostringstream log;
        std::vector<st::cli::HorizonMetrics> metrics;
        {
          py::gil_scoped_release release;
          metrics = st::cli::run_training(c, ds, out_dir, log);
        }
        std::vector<py::dict> rows;
        for (const auto& r : metrics) {
          py::dict d;
          d["horizon"] = r.horizon;
          d["mse"] = r.mse;
          d["mae"] = r.mae;
          rows.push_back(d);
        }
        return rows;
      },
      py::arg("config"), py::arg("out_dir"), "Train one model per horizon; returns test metrics.");

  m.def(
      "verify",
      [](std::uint64_t seed) {
        std::vector<py::dict> rows;
        for (const auto& r : st::verify::run_all(seed)) {
          py::dict d;
          d["check"] = r.check;
          d["samples"] = r.samples;
          d["max_error"] = r.max_error;
          d["threshold"] = r.threshold;
          d["pass"] = r.pass;
          rows.push_back(d);
        }
        return rows;
      },
      py::arg("seed") = 2026, "Invariant suite rows.");
}
