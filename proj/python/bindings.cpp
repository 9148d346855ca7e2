#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "atm/analysis.hpp"
#include "atm/config.hpp"
#include "atm/datasets.hpp"
#include "atm/divergence.hpp"
#include "atm/errors.hpp"

namespace py = pybind11;

namespace {

using Matrix = py::array_t<double, py::array::c_style | py::array::forcecast>;

atm::Tensor to_tensor(const Matrix& a) {
  if (a.ndim() != 2) throw atm::RankError("expected a 2-d array, got " + std::to_string(a.ndim()) + " dimensions");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return atm::Tensor(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

Matrix to_array(const atm::Tensor& t) {
  Matrix out({t.rows(), t.cols()});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

atm::SampleSet to_set(const Matrix& x, atm::Domain domain) { return atm::SampleSet(to_tensor(x), std::nullopt, domain); }

py::tuple as_tuple(const atm::SampleSet& s) { return py::make_tuple(to_array(s.features), *s.labels); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "C++ core of the atm package";

  py::register_exception<atm::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<atm::DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<atm::NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<atm::FormatError>(m, "FormatError", PyExc_ValueError);

  m.def(
      "gen_two_moons", [](std::size_t n, double noise, std::uint64_t seed) { return as_tuple(atm::gen_two_moons(n, noise, seed)); },
      py::arg("n"), py::arg("noise"), py::arg("seed"), "Two interleaved half-circles; returns (X, y).");

  m.def(
      "apply_shift",
      [](const Matrix& x, std::vector<int> y, const std::string& kind, double magnitude, double noise,
         std::uint64_t seed) {
        const atm::SampleSet s(to_tensor(x), std::move(y), atm::Domain::source);
        return as_tuple(atm::apply_shift(s, atm::ShiftSpec{atm::parse_shift_kind(kind), magnitude, noise, {}}, seed));
      },
      py::arg("x"), py::arg("y"), py::arg("kind"), py::arg("magnitude"), py::arg("noise") = 0.0, py::arg("seed") = 0);

  m.def(
      "mdd_full",
      [](const Matrix& s, const Matrix& t) {
        return atm::mdd_full(to_set(s, atm::Domain::source), to_set(t, atm::Domain::target));
      },
      py::arg("source"), py::arg("target"));

  m.def(
      "mdd_batch",
      [](const Matrix& sf, const Matrix& tf, std::vector<int> ys, std::vector<int> yt, std::array<bool, 3> mask) {
        return atm::mdd_batch(to_tensor(sf), to_tensor(tf), ys, yt, mask).item();
      },
      py::arg("source_features"), py::arg("target_features"), py::arg("source_labels"), py::arg("target_labels"),
      py::arg("mask") = std::array<bool, 3>{true, true, true});

  m.def(
      "mdd_population",
      [](std::vector<double> p, std::vector<double> q, const std::string& norm) {
        const atm::Norm n = norm == "l1" ? atm::Norm::l1 : atm::Norm::squared_l2;
        if (norm != "l1" && norm != "squared_l2") throw py::value_error("norm must be 'squared_l2' or 'l1'");
        return atm::mdd_population(atm::FiniteDist::one_hot(std::move(p)), atm::FiniteDist::one_hot(std::move(q)), n);
      },
      py::arg("p"), py::arg("q"), py::arg("norm") = "squared_l2", "MDD between one-hot embedded distributions.");

  m.def(
      "energy_distance",
      [](const Matrix& s, const Matrix& t) {
        return atm::energy_distance(to_set(s, atm::Domain::source), to_set(t, atm::Domain::target));
      },
      py::arg("source"), py::arg("target"));

  m.def(
      "mmd_gaussian",
      [](const Matrix& s, const Matrix& t, double bandwidth) {
        return atm::mmd_gaussian(to_set(s, atm::Domain::source), to_set(t, atm::Domain::target), bandwidth);
      },
      py::arg("source"), py::arg("target"), py::arg("bandwidth"));

  m.def(
      "jeffreys_kl",
      [](std::vector<double> p, std::vector<double> q) {
        return atm::jeffreys_kl(atm::FiniteDist::one_hot(std::move(p)), atm::FiniteDist::one_hot(std::move(q)));
      },
      py::arg("p"), py::arg("q"));

  m.def(
      "total_variation",
      [](std::vector<double> p, std::vector<double> q) {
        return atm::total_variation(atm::FiniteDist::one_hot(std::move(p)), atm::FiniteDist::one_hot(std::move(q)));
      },
      py::arg("p"), py::arg("q"));

  m.def(
      "lemma_audit",
      [](std::int64_t trials, std::size_t alphabet, std::uint64_t seed) {
        return atm::lemma_audit(trials, alphabet, seed).to_json();
      },
      py::arg("trials"), py::arg("alphabet"), py::arg("seed"), "Audit report as JSON text.");

  m.def(
      "a_distance",
      [](const Matrix& s, const Matrix& t, std::uint64_t seed) { return atm::a_distance(to_tensor(s), to_tensor(t), seed); },
      py::arg("source"), py::arg("target"), py::arg("seed") = 0);

  m.def("default_config", [] { return atm::ExperimentConfig::defaults().to_json(); }, "Default experiment config as JSON text.");

  m.def(
      "train",
      [](const std::string& config_json) {
        const auto config = atm::ExperimentConfig::parse(config_json);
        const auto data = atm::prepare_data(config.data);
        std::optional<atm::TrainResult> result;
        {
          py::gil_scoped_release release;
          result = atm::run(config.model.spec(data.source.dim()).build(config.train.seed), data.source, data.target,
                       config.train);
        }
        const atm::TrainResult& r = *result;
        py::dict out;
        out["metrics_csv"] = r.log.to_csv();
        out["epochs"] = r.log.rows.size();
        out["source_acc"] = atm::accuracy(r.model, data.source);
        out["target_acc"] = data.target.has_labels() ? py::object(py::float_(atm::target_accuracy(r.model, data.target)))
                                                     : py::object(py::none());
        return out;
      },
      py::arg("config_json"), "Train one model from a JSON config; returns the log and final accuracies.");

  m.def(
      "ablation_csv",
      [](const std::string& config_json) {
        const auto config = atm::ExperimentConfig::parse(config_json);
        const auto data = atm::prepare_data(config.data);
        std::vector<atm::AblationCell> cells;
        {
          py::gil_scoped_release release;
          cells = atm::ablation_grid(data.source, data.target, config.model.spec(data.source.dim()), config.train,
                                     config.analysis.seeds);
        }
        return atm::format_ablation_csv(cells);
      },
      py::arg("config_json"));
}
