// Thin Python surface over the C++ library: checkpoints, prediction, attacks,
// dataset conversion and the CLI entry point. Arrays cross as float64 numpy.
#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "tsadv/attacks.hpp"
#include "tsadv/checkpoint.hpp"
#include "tsadv/cli.hpp"
#include "tsadv/error.hpp"

namespace py = pybind11;
using namespace tsadv;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

py::dict result_dict(const AttackResult& r) {
  py::dict d;
  d["attack"] = attack_kind_name(r.kind);
  d["x_adv"] = to_array(r.x_adv);
  d["success"] = r.success;
  d["queries"] = r.queries;
  d["linf_norm"] = r.linf_norm;
  d["l2_norm"] = r.l2_norm;
  d["l0_norm"] = r.l0_norm;
  d["loss"] = r.loss;
  d["candidate_losses"] = r.candidate_losses;
  d["trace"] = r.trace;
  return d;
}

// A classifier plus the normalization it was trained with.
struct PyModel {
  Checkpoint ckpt;

  Tensor prepare(const Array& x, bool normalized) const {
    Tensor t = to_tensor(x);
    if (normalized || !ckpt.normalization) return t;
    return apply_normalization(LabeledSequence{t, 0, ""}, *ckpt.normalization).channels;
  }
};

}  // namespace

PYBIND11_MODULE(_tsadv, m) {
  m.doc() = "Adversarial robustness of 1D-CNN time-series classifiers";
  m.attr("__version__") = cli::kToolVersion;

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<UsageError>(m, "UsageError", base.ptr());
  py::register_exception<LoadError>(m, "LoadError", base.ptr());
  py::register_exception<ConversionError>(m, "ConversionError", base.ptr());
  py::register_exception<ConsistencyError>(m, "ConsistencyError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  py::class_<PyModel>(m, "Model")
      .def(py::init([](std::size_t in_channels, std::size_t num_classes, bool use_gnlm, std::uint64_t seed) {
             ModelConfig c;
             c.in_channels = in_channels;
             c.num_classes = num_classes;
             c.use_gnlm = use_gnlm;
             c.seed = seed;
             return PyModel{Checkpoint{Classifier(c), std::nullopt, ""}};
           }),
           py::arg("in_channels") = 3, py::arg("num_classes") = 20, py::arg("use_gnlm") = false,
           py::arg("seed") = 42)
      .def_static("load", [](const std::filesystem::path& p) { return PyModel{load_checkpoint(p)}; })
      .def("save", [](const PyModel& self, const std::filesystem::path& p) { save_checkpoint(self.ckpt, p); })
      .def_property_readonly("num_classes", [](const PyModel& self) { return self.ckpt.model.num_classes(); })
      .def_property_readonly("in_channels", [](const PyModel& self) { return self.ckpt.model.config().in_channels; })
      .def_property_readonly("use_gnlm", [](const PyModel& self) { return self.ckpt.model.config().use_gnlm; })
      .def_property_readonly("parameter_count", [](const PyModel& self) { return self.ckpt.model.parameter_count(); })
      .def_property_readonly("dataset_checksum", [](const PyModel& self) { return self.ckpt.dataset_checksum; })
      .def("parameters",
           [](const PyModel& self) {
             py::dict d;
             for (const auto& [name, value] : self.ckpt.model.parameters()) d[py::str(name)] = to_array(value);
             return d;
           })
      .def("logits",
           [](const PyModel& self, const Array& x, bool normalized) {
             return to_array(self.ckpt.model.logits(self.prepare(x, normalized)));
           },
           py::arg("x"), py::arg("normalized") = false)
      .def("predict",
           [](const PyModel& self, const Array& x, bool normalized) {
             const Prediction p = predict(self.ckpt.model, self.prepare(x, normalized));
             return py::make_tuple(p.label, to_array(p.probs));
           },
           py::arg("x"), py::arg("normalized") = false,
           "Returns (label, probabilities). Raw inputs are normalized with the checkpoint's statistics.")
      .def("attack",
           [](const PyModel& self, const Array& x, std::size_t y, double epsilon, const std::string& kind,
              std::uint64_t seed, bool normalized, std::optional<int> restarts, std::optional<int> steps) {
             nlohmann::json j{{"kind", kind}};
             if (restarts) j["restarts"] = *restarts;
             if (steps) j["steps"] = *steps;
             const AttackSpec spec = cli::attack_spec_from_json(j);
             return result_dict(run_attack(self.ckpt.model, self.prepare(x, normalized), y, epsilon, spec, seed));
           },
           py::arg("x"), py::arg("y"), py::arg("epsilon"), py::arg("kind") = "pgd", py::arg("seed") = 42,
           py::arg("normalized") = false, py::arg("restarts") = py::none(), py::arg("steps") = py::none(),
           "Runs one attack (default settings unless overridden) in normalized input space; x_adv is normalized too.");

  m.def(
      "convert_dataset",
      [](const std::filesystem::path& source, const std::filesystem::path& out, std::uint64_t seed) {
        const ConversionSummary s = convert_uci_charset(source, out, seed);
        py::dict d;
        d["records"] = s.records;
        d["train"] = s.train;
        d["val"] = s.val;
        d["test"] = s.test;
        d["num_classes"] = s.num_classes;
        d["padded"] = s.padded;
        d["truncated"] = s.truncated;
        return d;
      },
      py::arg("source"), py::arg("out"), py::arg("seed") = 42);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the tsadv command line in-process; returns (exit_code, stdout, stderr).");
}
