#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "retedit/pipeline.hpp"
#include "retedit/synth.hpp"
#include "retedit/vmf.hpp"

namespace py = pybind11;
using namespace retedit;

namespace {

vmf::Vector to_unit_checked(const vmf::Vector& v) { return vmf::UnitVector::normalize(v).values(); }

}  // namespace

PYBIND11_MODULE(_retedit, m) {
  m.doc() = "Retrieve-and-edit structured output prediction";

  py::register_exception<MissingArtifact>(m, "MissingArtifact", PyExc_FileNotFoundError);
  py::register_exception<NumericFailure>(m, "NumericFailure", PyExc_ArithmeticError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<CorpusError>(m, "CorpusError", PyExc_ValueError);

  m.def("tokenize", &tokenize, py::arg("text"));
  m.def("detokenize", &detokenize, py::arg("tokens"));

  py::class_<Example>(m, "Example")
      .def(py::init<>())
      .def_readwrite("id", &Example::id)
      .def_readwrite("group_key", &Example::group_key)
      .def_readwrite("input_fields", &Example::input_fields)
      .def_readwrite("output", &Example::output)
      .def("flat_input", &Example::flat_input)
      .def("to_json", [](const Example& ex) { return example_to_json(ex); })
      .def_static("from_json", [](const std::string& line) { return example_from_json(line); })
      .def("__eq__", [](const Example& a, const Example& b) { return a == b; })
      .def("__repr__", [](const Example& ex) { return "<Example " + ex.id + ">"; });

  m.def("load_jsonl", &load_jsonl, py::arg("path"));
  m.def("save_jsonl", &save_jsonl, py::arg("path"), py::arg("examples"));
  m.def(
      "synthesize_corpus",
      [](int templates, int instances, std::uint64_t seed) { return synthesize_corpus({templates, instances, seed}); },
      py::arg("templates") = 200, py::arg("instances") = 10, py::arg("seed") = 0);

  auto v = m.def_submodule("vmf", "von Mises-Fisher numerics");
  v.def("log_bessel_i", &vmf::log_bessel_i, py::arg("nu"), py::arg("x"));
  v.def("bessel_ratio", &vmf::bessel_ratio, py::arg("d"), py::arg("kappa"));
  v.def("log_norm_const", &vmf::log_norm_const, py::arg("d"), py::arg("kappa"));
  v.def(
      "kl", [](const vmf::Vector& a, const vmf::Vector& b, double kappa) {
        return vmf::kl(a, b, static_cast<int>(a.size()), kappa);
      },
      py::arg("mu1"), py::arg("mu2"), py::arg("kappa"));
  v.def(
      "sample",
      [](const vmf::Vector& mu, double kappa, int n, std::uint64_t seed) {
        const vmf::VmfDistribution dist(vmf::UnitVector::normalize(mu), kappa);
        Rng rng(seed);
        Eigen::MatrixXd out(n, mu.size());
        for (int i = 0; i < n; ++i) out.row(i) = vmf::sample(dist, rng).values().transpose();
        return out;
      },
      py::arg("mu"), py::arg("kappa"), py::arg("n"), py::arg("seed") = 0);
  v.def("normalize", &to_unit_checked, py::arg("v"));

  m.def("bleu", &bleu, py::arg("candidate"), py::arg("reference"));
  m.def("exact_match", &exact_match, py::arg("candidate"), py::arg("reference"));
  m.def(
      "completion_runs",
      [](const std::vector<bool>& bits) {
        const auto r = completion_runs(bits);
        return py::make_tuple(r.longest, r.mean);
      },
      py::arg("correct"));

  py::class_<Config>(m, "Config")
      .def(py::init<>())
      .def_static("load", &Config::load)
      .def_static("from_text", &Config::from_text)
      .def_static("keys", &Config::keys)
      .def("set", &Config::set)
      .def("get", &Config::get)
      .def("set_seed", &Config::set_seed)
      .def("validate", &Config::validate)
      .def("save", &Config::save)
      .def("to_text", &Config::to_text)
      .def("hash", &Config::hash)
      .def("__getitem__", &Config::get)
      .def("__setitem__", &Config::set);

  py::class_<StageCounts>(m, "StageCounts")
      .def_readonly("raw", &StageCounts::raw)
      .def_readonly("filtered", &StageCounts::filtered)
      .def_readonly("deduplicated", &StageCounts::deduplicated)
      .def_readonly("train", &StageCounts::train)
      .def_readonly("validation", &StageCounts::validation)
      .def_readonly("test", &StageCounts::test);

  py::class_<EvalReport>(m, "EvalReport")
      .def_readonly("system", &EvalReport::system)
      .def_readonly("examples", &EvalReport::examples)
      .def_readonly("bleu", &EvalReport::bleu)
      .def_readonly("exact_match", &EvalReport::exact_match)
      .def_readonly("ks", &EvalReport::ks)
      .def_readonly("longest", &EvalReport::longest)
      .def_readonly("average", &EvalReport::average)
      .def("__repr__", [](const EvalReport& r) {
        return "<EvalReport " + r.system + " bleu=" + std::to_string(r.bleu) + ">";
      });
  m.def("reports_from_json", &reports_from_json, py::arg("text"));
  m.def("format_table", &format_table, py::arg("reports"));

  py::class_<Completion>(m, "Completion")
      .def_readonly("retrieved_id", &Completion::retrieved_id)
      .def_readonly("distance", &Completion::distance)
      .def_readonly("outputs", &Completion::outputs)
      .def_readonly("logprobs", &Completion::logprobs);

  const auto gil = py::call_guard<py::gil_scoped_release>();
  m.def("cmd_synth", [](const Config& c, const std::filesystem::path& out) { return cmd_synth(c, out); }, gil);
  m.def("cmd_ingest", [](const Config& c, const std::filesystem::path& raw) { return cmd_ingest(c, raw); }, gil);
  m.def("cmd_train_retriever", [](const Config& c) { cmd_train_retriever(c); }, gil);
  m.def("cmd_build_index", [](const Config& c) { cmd_build_index(c); }, gil);
  m.def("cmd_train_editor", [](const Config& c) { cmd_train_editor(c); }, gil);
  m.def(
      "cmd_evaluate", [](const Config& c, bool force) { return cmd_evaluate(c, force); }, py::arg("config"),
      py::arg("force") = false, gil);
  m.def(
      "cmd_complete",
      [](const Config& c, const Example& x, bool train_mode, int k) { return cmd_complete(c, x, train_mode, k); },
      py::arg("config"), py::arg("example"), py::arg("train_mode") = false, py::arg("k") = 5, gil);
  m.def("run_pipeline", [](const Config& c) { return run_pipeline(c); }, gil);
}
