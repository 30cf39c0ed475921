#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "vqunet/checkpoint.hpp"
#include "vqunet/config_io.hpp"
#include "vqunet/harness.hpp"
#include "vqunet/vq.hpp"

namespace py = pybind11;
using namespace vqunet;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

std::vector<int> to_labels(const py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>& a) {
  return {a.data(), a.data() + a.size()};
}

py::tuple dataset_tuple(const Dataset& d) {
  py::array_t<std::int64_t> labels(static_cast<py::ssize_t>(d.labels.size()));
  std::copy(d.labels.begin(), d.labels.end(), labels.mutable_data());
  return py::make_tuple(to_array(d.images), labels);
}

}  // namespace

PYBIND11_MODULE(_vqunet, m) {
  m.doc() = "VQUNet adversarial purification core";

  // Translators run most recent first, so the base class goes first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_IOError);
  py::register_exception<IdxError>(m, "IdxError", PyExc_IOError);

  m.def("version", &version_string);

  // Configs cross the boundary as JSON text; the Python wrapper converts to dicts.
  m.def("desk_scale_config_json", [] { return to_json(RunConfig::desk_scale()).dump(); });
  m.def("resolve_config_json", [](const std::string& text) {
    return to_json(run_config_from_json(nlohmann::json::parse(text))).dump();
  });

  m.def("synthetic_dataset",
        [](std::size_t n, std::size_t classes, std::uint64_t seed) {
          return dataset_tuple(synthetic_dataset(n, classes, seed));
        },
        py::arg("num_samples"), py::arg("num_classes"), py::arg("seed"));
  m.def("load_idx", [](const std::string& images, const std::string& labels) {
    return dataset_tuple(load_idx(images, labels));
  });

  m.def("nearest_code", [](const Array& v, const Array& codes) {
    return nearest_code(std::span(v.data(), static_cast<std::size_t>(v.size())), Codebook(to_tensor(codes), 1));
  });

  py::class_<VQUNet>(m, "VQUNet")
      .def(py::init([](const std::string& config_json) {
        return VQUNet(vqunet_config_from_json(nlohmann::json::parse(config_json)));
      }))
      .def_static("load", [](const std::string& path) { return load_vqunet(path); })
      .def("save", [](const VQUNet& model, const std::string& path) { save(model, path); })
      .def("config_json", [](const VQUNet& model) { return to_json(model.config()).dump(); })
      .def("purify", [](const VQUNet& model, const Array& x) { return to_array(purify(model, to_tensor(x))); })
      .def("code_indices",
           [](const VQUNet& model, const Array& x) {
             NoGradGuard no_grad;
             std::vector<std::vector<std::int64_t>> out;
             for (const auto& r : model.forward(to_tensor(x)).per_depth) out.push_back(r.indices);
             return out;
           })
      .def("train", [](VQUNet& model, const Array& images, const py::array_t<std::int64_t>& labels) {
        const Dataset data{to_tensor(images), to_labels(labels), Split::kTrain};
        std::vector<double> losses;
        {
          py::gil_scoped_release release;
          for (const EpochLoss& e : train(model, data).epochs) losses.push_back(e.total);
        }
        return losses;
      });

  py::class_<Classifier>(m, "Classifier")
      .def(py::init([](const std::string& config_json) {
        return Classifier(classifier_config_from_json(nlohmann::json::parse(config_json)));
      }))
      .def_static("load", [](const std::string& path) { return load_classifier(path); })
      .def("save", [](const Classifier& model, const std::string& path) { save(model, path); })
      .def("predict", [](const Classifier& model, const Array& x) { return predict_labels(model, to_tensor(x)); })
      .def("accuracy", [](const Classifier& model, const Array& x, const py::array_t<std::int64_t>& labels) {
        return accuracy(model, to_tensor(x), to_labels(labels));
      });

  m.def("train_classifier",
        [](const Array& images, const py::array_t<std::int64_t>& labels, const std::string& config_json) {
          const Dataset data{to_tensor(images), to_labels(labels), Split::kTrain};
          const ClassifierConfig c = classifier_config_from_json(nlohmann::json::parse(config_json));
          py::gil_scoped_release release;
          return train_classifier(data, c);
        });

  m.def("attack",
        [](const Classifier& model, const Array& x, const py::array_t<std::int64_t>& labels, const std::string& family,
           double epsilon, std::uint64_t seed) {
          const AttackConfig c = AttackConfig::defaults(parse_attack_family(family), epsilon, seed);
          return to_array(run_attack(model, to_tensor(x), to_labels(labels), c));
        },
        py::arg("classifier"), py::arg("images"), py::arg("labels"), py::arg("family"), py::arg("epsilon"),
        py::arg("seed") = 0);

  m.def("full_run", [](const std::string& config_json) {
    const RunConfig c = run_config_from_json(nlohmann::json::parse(config_json));
    ensure_writable_dir(c.out_dir);
    py::gil_scoped_release release;
    Models models;
    const EvalReport report = run_pipeline(c, &models);
    save_models(models, c.out_dir);
    emit_report(report, c, c.out_dir);
    return c.out_dir;
  });
}
