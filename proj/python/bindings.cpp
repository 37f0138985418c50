#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mtadv/config.hpp"
#include "mtadv/errors.hpp"
#include "mtadv/metrics.hpp"
#include "mtadv/objectives.hpp"
#include "mtadv/perturbation.hpp"
#include "mtadv/pipeline.hpp"

namespace py = pybind11;
using namespace mtadv;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

BasicImage<double> to_image(const Array& a) {
  if (a.ndim() != 3) throw std::invalid_argument("expected an H x W x C array");
  const Shape s{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2))};
  return BasicImage<double>(s, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const BasicImage<double>& img) {
  Array out({img.height(), img.width(), img.channels()});
  std::copy(img.data(), img.data() + img.size(), out.mutable_data());
  return out;
}

RunConfig config_from(const std::string& config_json, const std::string& out) {
  RunConfig c = run_config_from_json(nlohmann::json::parse(config_json));
  if (!out.empty()) c.output_dir = out;
  return c;
}

CommandOptions options(bool overwrite, bool resume) {
  CommandOptions o;
  o.overwrite = overwrite;
  o.resume = resume;
  return o;
}

py::dict summary(const AttackSummary& s) {
  py::dict d;
  d["attacks"] = s.attacks;
  d["samples_run"] = s.samples_run;
  d["samples_skipped"] = s.samples_skipped;
  d["partial"] = s.partial;
  d["failed"] = s.failed;
  d["warnings"] = s.warnings;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-task adversarial attacks on a toy CLIP testbed";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<GateFailure>(m, "GateFailure", PyExc_RuntimeError);
  py::register_exception<UndefinedAsr>(m, "UndefinedAsr", PyExc_ValueError);

  m.def("split_budget", [](double eps_total, double lambda) {
    const BudgetSplit b = split_budget(eps_total, lambda);
    return py::dict(py::arg("eps_task") = b.eps_task, py::arg("eps_clip") = b.eps_clip,
                    py::arg("eps_total") = b.eps_total, py::arg("lambda_") = b.lambda);
  }, py::arg("eps_total"), py::arg("lam"));

  m.def("project_linf", [](const Array& delta, double eps) {
    Perturbation<double> p{to_image(delta), 0.0, StageTag::composed};
    return to_array(project_linf(std::move(p), eps).delta);
  }, py::arg("delta"), py::arg("eps"));

  m.def("pgd_step", [](const Array& x, const Array& grad, double alpha, const Array& x_clean, double eps) {
    return to_array(pgd_step(to_image(x), to_image(grad), alpha, to_image(x_clean), eps));
  }, py::arg("x"), py::arg("grad"), py::arg("alpha"), py::arg("x_clean"), py::arg("eps"));

  m.def("asr", &asr, py::arg("before"), py::arg("after"));
  m.def("round_decimal", &round_decimal, py::arg("value"), py::arg("digits"));

  m.def("recall_at_1", [](py::array_t<double, py::array::c_style | py::array::forcecast> sim,
                          const std::vector<int>& correct) {
    if (sim.ndim() != 2) throw std::invalid_argument("similarity must be a matrix");
    nn::Mat<double> mat(sim.shape(0), sim.shape(1));
    for (py::ssize_t r = 0; r < sim.shape(0); ++r)
      for (py::ssize_t c = 0; c < sim.shape(1); ++c) mat(r, c) = sim.at(r, c);
    return recall_at_1(mat, correct);
  }, py::arg("similarity"), py::arg("correct"));

  m.def("miou", [](const std::vector<int>& pred, const std::vector<int>& gt) { return miou(pred, gt); },
        py::arg("pred"), py::arg("gt"));

  m.def("softmax_distribution", [](const std::vector<double>& sims, double temperature) {
    return softmax_distribution(sims, temperature).probs;
  }, py::arg("similarities"), py::arg("temperature"));

  m.def("kl_divergence", [](const std::vector<double>& p, const std::vector<double>& q) {
    return kl_divergence(PredictionDistribution{p}, PredictionDistribution{q});
  }, py::arg("p"), py::arg("q"));

  m.def("generate_dataset", [](const std::string& spec_json) {
    const Dataset ds = generate_dataset(dataset_spec_from_json(nlohmann::json::parse(spec_json)));
    py::dict out;
    for (const auto& [name, split] : {std::pair{"train", &ds.train}, {"val", &ds.val}, {"test", &ds.test}}) {
      py::list rows;
      for (const auto& s : *split) {
        py::array_t<int> mask({s.image.height(), s.image.width()});
        std::copy(s.seg_mask.begin(), s.seg_mask.end(), mask.mutable_data());
        rows.append(py::dict(py::arg("id") = s.id, py::arg("caption") = s.caption,
                             py::arg("image") = to_array(s.image), py::arg("mask") = mask,
                             py::arg("classes") = s.classes));
      }
      out[name] = rows;
    }
    return out;
  }, py::arg("spec_json"));

  m.def("default_config_json", [] { return to_json(default_run_config()).dump(); });
  m.def("resolve_config_json", [](const std::string& config_json) {
    return to_json(run_config_from_json(nlohmann::json::parse(config_json))).dump();
  }, py::arg("config_json"));

  auto command = [&m](const char* name, auto fn) {
    m.def(name, [fn](const std::string& config_json, const std::string& out, bool overwrite, bool resume) {
      return fn(config_from(config_json, out), options(overwrite, resume));
    }, py::arg("config_json"), py::arg("out") = "", py::arg("overwrite") = false, py::arg("resume") = false);
  };
  command("generate", [](const RunConfig& c, const CommandOptions& o) { cmd_generate(c, o); return py::none(); });
  command("train", [](const RunConfig& c, const CommandOptions& o) { cmd_train(c, o); return py::none(); });
  command("report", [](const RunConfig& c, const CommandOptions& o) { return cmd_report(c, o).missing; });
  command("attack", [](const RunConfig& c, const CommandOptions& o) { return summary(cmd_attack(c, o)); });
  command("run_all", [](const RunConfig& c, const CommandOptions& o) { return summary(cmd_all(c, o)); });
}
