#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "deeplgr/dataset_io.hpp"
#include "deeplgr/metrics.hpp"
#include "deeplgr/training.hpp"

namespace py = pybind11;
using namespace deeplgr;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const F64Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> to_numpy(const Tensor& t) {
  py::array_t<double> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::object json_to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json py_to_json(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

ModelConfig config_from(const py::object& cfg) { return cfg.is_none() ? ModelConfig{} : config_from_json(py_to_json(cfg)); }

Subset parse_subset(const std::string& s) {
  if (s == "train") return Subset::train;
  if (s == "val") return Subset::val;
  if (s == "test") return Subset::test;
  throw ConfigError("split must be train|val|test, got '" + s + "'");
}

struct PyTrainResult {
  py::list log;
  std::size_t best_epoch;
  double best_val_mae;
  bool early_stopped, diverged;
  std::string divergence;
  Normalizer normalizer;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "DeepLGR crowd-flow models (C++ core)";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("shape",
                             [](const Dataset& d) {
                               return py::make_tuple(d.meta.num_slots, d.meta.H, d.meta.W, d.meta.K);
                             })
      .def_property_readonly("slots_per_day", [](const Dataset& d) { return d.meta.slots_per_day; })
      .def_property_readonly("meta", [](const Dataset& d) { return json_to_py(meta_to_json(d.meta)); })
      .def_property_readonly("values",
                             [](const Dataset& d) {
                               py::array_t<float> a({d.meta.num_slots, d.meta.H, d.meta.W, d.meta.K});
                               std::copy(d.values.begin(), d.values.end(), a.mutable_data());
                               return a;
                             })
      .def("coarsen", [](const Dataset& d, std::size_t s) { return coarsen(d, s); }, py::arg("s"))
      .def("save", [](const Dataset& d, const std::filesystem::path& p) { write_dataset(p, d); }, py::arg("path"))
      .def_static("load", &read_dataset, py::arg("path"))
      .def("__repr__", [](const Dataset& d) {
        return "<Dataset " + std::to_string(d.meta.num_slots) + " slots of " + std::to_string(d.meta.H) + "x" +
               std::to_string(d.meta.W) + "x" + std::to_string(d.meta.K) + ">";
      });

  m.def(
      "generate",
      [](std::size_t height, std::size_t width, std::size_t days, std::size_t slots_per_day, std::uint64_t seed,
         double noise, std::size_t zones) {
        DatasetMeta meta;
        meta.H = height;
        meta.W = width;
        meta.slots_per_day = slots_per_day;
        meta.num_slots = days * slots_per_day;
        meta.seed = seed;
        meta.generator.noise_scale = noise;
        meta.generator.num_zones = zones;
        return generate_synthetic(meta, make_archetype_map(height, width, meta.generator.archetypes, zones, seed));
      },
      py::arg("height") = 32, py::arg("width") = 32, py::arg("days") = 60, py::arg("slots_per_day") = 48,
      py::arg("seed") = 0, py::arg("noise") = 1.0, py::arg("zones") = 8,
      "Deterministic synthetic crowd-flow dataset.");

  m.def("default_config", [] { return json_to_py(config_to_json(ModelConfig{})); });
  m.def("variant_names", &variant_names);
  m.def(
      "variant_config",
      [](const std::string& name, const py::object& base) {
        return json_to_py(config_to_json(build_variant(name, config_from(base))));
      },
      py::arg("name"), py::arg("base") = py::none());

  py::class_<DeepLGR>(m, "Model")
      .def(py::init([](const py::object& cfg, std::size_t H, std::size_t W, std::size_t K) {
             return DeepLGR(config_from(cfg), H, W, K);
           }),
           py::arg("config") = py::none(), py::arg("H") = 32, py::arg("W") = 32, py::arg("K") = 2)
      .def(
          "forward",
          [](DeepLGR& model, const F64Array& x, bool train_bn) {
            return to_numpy(model.forward(to_tensor(x), train_bn ? ops::BnMode::train : ops::BnMode::eval));
          },
          py::arg("x"), py::arg("train_bn") = false, "x[B, h, w, C] -> y[B, H, W, K] (float64)")
      .def_property_readonly("config", [](const DeepLGR& m) { return json_to_py(config_to_json(m.config())); })
      .def_property_readonly("input_shape",
                             [](const DeepLGR& m) { return py::make_tuple(m.in_h(), m.in_w(), m.in_channels()); })
      .def_property_readonly("output_shape", [](const DeepLGR& m) { return py::make_tuple(m.H(), m.W(), m.K()); })
      .def("param_count", &DeepLGR::param_count)
      .def("parameters", [](const DeepLGR& m) {
        py::dict d;
        for (const auto& [name, t] : m.parameters()) d[py::str(name)] = to_numpy(t);
        return d;
      });

  py::class_<Normalizer>(m, "Normalizer")
      .def("to_dict", [](const Normalizer& n) { return json_to_py(n.to_json()); });

  py::class_<PyTrainResult>(m, "TrainResult")
      .def_readonly("log", &PyTrainResult::log)
      .def_readonly("best_epoch", &PyTrainResult::best_epoch)
      .def_readonly("best_val_mae", &PyTrainResult::best_val_mae)
      .def_readonly("early_stopped", &PyTrainResult::early_stopped)
      .def_readonly("diverged", &PyTrainResult::diverged)
      .def_readonly("divergence", &PyTrainResult::divergence)
      .def_readonly("normalizer", &PyTrainResult::normalizer);

  m.def(
      "train",
      [](DeepLGR& model, const Dataset& ds, const std::string& out_dir) {
        const TaskData data = TaskData::build(ds, model.config());
        TrainOptions opts;
        if (!out_dir.empty()) opts.out_dir = out_dir;
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(model, data, opts);
        }
        PyTrainResult out{py::list(), r.best_epoch, r.best_val_mae, r.early_stopped, r.diverged, r.divergence,
                          r.normalizer};
        for (const auto& e : r.log) out.log.append(json_to_py(e.to_json()));
        return out;
      },
      py::arg("model"), py::arg("dataset"), py::arg("out_dir") = "",
      "Adam + early stopping; the model ends holding its best-validation parameters.");

  m.def(
      "evaluate",
      [](DeepLGR& model, const Dataset& ds, const Normalizer& norm, const std::string& split) {
        const TaskData data = TaskData::build(ds, model.config());
        return json_to_py(evaluate(model, data, data.slots(parse_subset(split)), norm, "DeepLGR").to_json());
      },
      py::arg("model"), py::arg("dataset"), py::arg("normalizer"), py::arg("split") = "test");

  m.def(
      "evaluate_baseline",
      [](const Dataset& ds, const std::string& name, const py::object& cfg, const std::string& split) {
        const TaskData data = TaskData::build(ds, config_from(cfg));
        const Baseline b = name == "last" ? Baseline::last
                           : name == "ca" ? Baseline::ca
                           : name == "uniform_split"
                               ? Baseline::uniform_split
                               : throw ConfigError("baseline must be last|ca|uniform_split, got '" + name + "'");
        return json_to_py(evaluate_baseline(data, data.slots(parse_subset(split)), b).to_json());
      },
      py::arg("dataset"), py::arg("name"), py::arg("config") = py::none(), py::arg("split") = "test");

  m.def("load_checkpoint", [](const std::filesystem::path& p) { return model_from_checkpoint(load_checkpoint(p)); },
        py::arg("path"));

  m.def("mae", [](const F64Array& p, const F64Array& y) { return mae(to_tensor(p), to_tensor(y)); });
  m.def("smape", [](const F64Array& p, const F64Array& y) { return smape(to_tensor(p), to_tensor(y)); });

  m.def(
      "predictor_param_counts",
      [](std::size_t H, std::size_t W, std::size_t n_f, std::size_t k, std::size_t d1, std::size_t d2, std::size_t d3) {
        py::dict d;
        d["shared"] = counts::shared(n_f);
        d["full"] = counts::full(H, W, n_f);
        d["mf"] = counts::mf(H, W, n_f, k);
        d["td"] = counts::td(H, W, n_f, d1, d2, d3);
        return d;
      },
      py::arg("H"), py::arg("W"), py::arg("n_f"), py::arg("k") = 16, py::arg("d1") = 8, py::arg("d2") = 8,
      py::arg("d3") = 8);
}
