#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "xtransfer/bandit.hpp"
#include "xtransfer/engine.hpp"
#include "xtransfer/errors.hpp"
#include "xtransfer/evalharness.hpp"
#include "xtransfer/zoo.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace xtransfer;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<float> to_numpy(const FloatTensor& t) {
  py::array_t<float> a(std::vector<py::ssize_t>(t.shape.begin(), t.shape.end()));
  std::copy(t.values.begin(), t.values.end(), a.mutable_data());
  return a;
}

Tensor from_numpy(const F64Array& a) {
  Shape s(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(s), std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> to_numpy(const Tensor& t) {
  py::array_t<double> a(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.values().begin(), t.values().end(), a.mutable_data());
  return a;
}

// Accepts [3,H,W] or [B,3,H,W]; returns the same rank.
py::array_t<double> apply(const Perturbation& p, const F64Array& images) {
  Tensor x = from_numpy(images);
  const bool single = x.rank() == 3;
  if (single) x = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  Tensor out;
  {
    py::gil_scoped_release release;
    out = apply_perturbation(ImageBatch(std::move(x)), p).pixels();
  }
  if (single) out = out.reshaped({out.dim(1), out.dim(2), out.dim(3)});
  return to_numpy(out);
}

py::object json_to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }
json py_to_json(const py::object& o) {
  return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Universal adversarial perturbations for dual encoders";
  m.attr("__version__") = kGeneratorVersion;

  auto base = py::register_exception<Error>(m, "XTransferError", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<UnknownAttacker>(m, "UnknownAttacker", base.ptr());
  py::register_exception<DigestMismatch>(m, "DigestMismatch", base.ptr());
  py::register_exception<InvariantViolation>(m, "InvariantViolation", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  py::class_<Perturbation>(m, "Perturbation")
      .def_static("load", [](const std::filesystem::path& p) { return load_perturbation(p); }, py::arg("path"))
      .def_static(
          "linf",
          [](const F64Array& delta, double epsilon) {
            if (delta.ndim() != 3) throw ValidationError("delta must have shape [3,H,W]");
            const Resolution res{static_cast<std::size_t>(delta.shape(1)), static_cast<std::size_t>(delta.shape(2))};
            Perturbation p = Perturbation::identity(ThreatModel::linf(epsilon), res);
            p.delta = FloatTensor::from(from_numpy(delta));
            p.validate();
            return p;
          },
          py::arg("delta"), py::arg("epsilon"))
      .def(
          "save",
          [](const Perturbation& p, const std::filesystem::path& path, const py::object& summary) {
            const ArtifactDescriptor d =
                save_perturbation(p, path, summary.is_none() ? json::object() : py_to_json(summary));
            return d.digest;
          },
          py::arg("path"), py::arg("summary") = py::none())
      .def("validate", &Perturbation::validate)
      .def("__call__", &apply, py::arg("images"))
      .def_property_readonly("threat_model", [](const Perturbation& p) { return json_to_py(json(p.threat_model)); })
      .def_property_readonly("key", &threat_model_key)
      .def_property_readonly("resolution",
                             [](const Perturbation& p) { return py::make_tuple(p.resolution.height, p.resolution.width); })
      .def_property_readonly("targeted", [](const Perturbation& p) { return p.targeted; })
      .def_property_readonly("target_text", [](const Perturbation& p) { return p.target_text; })
      .def_property_readonly("delta", [](const Perturbation& p) { return to_numpy(p.delta); })
      .def_property_readonly("mask_logits", [](const Perturbation& p) { return to_numpy(p.mask_logits); })
      .def_property_readonly("pattern_logits", [](const Perturbation& p) { return to_numpy(p.pattern_logits); })
      .def("__repr__", [](const Perturbation& p) {
        return "<Perturbation " + threat_model_key(p) + " " + std::to_string(p.resolution.height) + "x" +
               std::to_string(p.resolution.width) + ">";
      });

  py::class_<ZooIndex>(m, "ZooIndex")
      .def(py::init<>())
      .def_static("load", &ZooIndex::load, py::arg("path"))
      .def("save", &ZooIndex::save, py::arg("path"))
      .def("list_threat_models", &ZooIndex::list_threat_models)
      .def("list_attackers", &ZooIndex::list_attackers, py::arg("threat_model"))
      .def("load_attacker", &ZooIndex::load_attacker, py::arg("threat_model"), py::arg("id"))
      .def(
          "add",
          [](ZooIndex& z, const std::string& tm, const std::string& id, const std::string& path,
             const std::string& digest) {
            ArtifactDescriptor d;
            d.path = path;
            d.digest = digest;
            z.add(tm, id, d);
          },
          py::arg("threat_model"), py::arg("id"), py::arg("path"), py::arg("digest"));

  m.def("linf_bound_f32", &linf_bound_f32, py::arg("epsilon"));
  m.def("non_targeted_asr", &non_targeted_asr, py::arg("s_clean"), py::arg("s_adv"));
  m.def(
      "ucb_scores",
      [](std::vector<double> rewards, std::vector<std::size_t> counts, std::size_t total) {
        BanditState s;
        s.rewards = std::move(rewards);
        s.counts = std::move(counts);
        s.total = total;
        s.validate();
        return ucb_scores(s);
      },
      py::arg("rewards"), py::arg("counts"), py::arg("total"));

  // Runs one generation job from a JSON-compatible config dict; encoders are
  // resolved relative to `base_dir`.
  m.def(
      "generate",
      [](const py::object& config, const F64Array& surrogate_images, const std::filesystem::path& base_dir) {
        AttackConfig c = py_to_json(config).get<AttackConfig>();
        c.validate();
        ImageBatch images(from_numpy(surrogate_images));
        AttackResult r;
        {
          py::gil_scoped_release release;
          r = run_attack(c, std::make_shared<EncoderRegistry>(base_dir), images);
        }
        return py::make_tuple(r.perturbation, r.trace.to_jsonl());
      },
      py::arg("config"), py::arg("surrogate_images"), py::arg("base_dir") = std::filesystem::path{});
}
