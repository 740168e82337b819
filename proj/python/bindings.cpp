#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <sstream>

#include "lami/errors.hpp"
#include "lami/graph.hpp"
#include "lami/ingestion.hpp"
#include "lami/metrics.hpp"
#include "lami/pipeline.hpp"

namespace py = pybind11;
using namespace lami;

namespace {

EvalReport metrics_from_lists(const std::vector<double>& probabilities, const std::vector<bool>& labels,
                              double threshold) {
  // std::vector<bool> has no contiguous storage for std::span.
  std::unique_ptr<bool[]> buf(new bool[labels.size()]);
  for (std::size_t i = 0; i < labels.size(); ++i) buf[i] = labels[i];
  return compute_metrics(probabilities, std::span<const bool>(buf.get(), labels.size()), threshold);
}

Corpus corpus_from_text(const std::string& text) {
  std::istringstream in(text);
  return read_corpus(in);
}

std::string corpus_to_text(const Corpus& c) {
  std::ostringstream out;
  write_corpus(out, c);
  return out.str();
}

}  // namespace

PYBIND11_MODULE(_lami, m) {
  m.doc() = "Bindings for the lami survey-graph pipeline";

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

  py::class_<EvalReport>(m, "EvalReport")
      .def_readonly("tp", &EvalReport::tp)
      .def_readonly("fp", &EvalReport::fp)
      .def_readonly("fn", &EvalReport::fn)
      .def_readonly("tn", &EvalReport::tn)
      .def_readonly("accuracy", &EvalReport::accuracy)
      .def_readonly("precision", &EvalReport::precision)
      .def_readonly("recall", &EvalReport::recall)
      .def_readonly("f1_macro", &EvalReport::f1_macro)
      .def_readonly("auc", &EvalReport::auc)
      .def_readonly("precision_macro", &EvalReport::precision_macro)
      .def_readonly("recall_macro", &EvalReport::recall_macro)
      .def_readonly("precision_undefined", &EvalReport::precision_undefined)
      .def_readonly("recall_undefined", &EvalReport::recall_undefined)
      .def_readonly("threshold", &EvalReport::threshold)
      .def("to_json", [](const EvalReport& r) { return report_to_json(r); });

  m.def("compute_metrics", &metrics_from_lists, py::arg("probabilities"), py::arg("labels"),
        py::arg("threshold") = 0.5);

  py::class_<GraphStats>(m, "GraphStats")
      .def_readonly("n_graphs", &GraphStats::n_graphs)
      .def_readonly("n_positive", &GraphStats::n_positive)
      .def_readonly("n_negative", &GraphStats::n_negative)
      .def_readonly("questions_per_graph", &GraphStats::questions_per_graph)
      .def_readonly("topics_per_graph", &GraphStats::topics_per_graph)
      .def_readonly("unique_relations", &GraphStats::unique_relations);

  py::class_<Corpus>(m, "Corpus")
      .def_static("from_text", &corpus_from_text)
      .def_static("load", &load_corpus)
      .def("to_text", &corpus_to_text)
      .def("save", [](const Corpus& c, const std::string& path) { save_corpus(path, c); })
      .def("__len__", [](const Corpus& c) { return c.graphs.size(); })
      .def("stats", [](const Corpus& c) { return corpus_stats(c.graphs); })
      .def("respondent_ids", [](const Corpus& c) {
        std::vector<std::string> ids;
        for (const auto& g : c.graphs) ids.push_back(g.respondent_id);
        return ids;
      });

  m.def(
      "generate_synthetic",
      [](const std::string& spec_json) {
        SynthResult r = generate_synthetic_corpus(parse_synth_spec(spec_json));
        return py::make_tuple(std::move(r.corpus), r.ground_truth_json);
      },
      py::arg("spec_json"), "Returns (corpus, ground_truth_json).");

  m.def(
      "normalize_config", [](const std::string& text) { return run_config_to_json(parse_run_config(text)); },
      py::arg("config_json"), "Parses a run config strictly and returns it with defaults filled in.");

  m.def(
      "run",
      [](const Corpus& corpus, const std::string& config_json, const std::string& out_dir) {
        const RunConfig cfg = parse_run_config(config_json);
        std::unique_ptr<RunArtifacts> run;
        {
          py::gil_scoped_release release;
          run = run_pipeline(corpus, cfg, out_dir);
        }
        py::dict d;
        d["test_report"] = run->test_report;
        d["lm_digest_before"] = run->lm_digest_before;
        d["lm_digest_after"] = run->lm_digest_after;
        if (run->lm_agreement) d["lm_agreement"] = *run->lm_agreement;
        return d;
      },
      py::arg("corpus"), py::arg("config_json") = "{}", py::arg("out_dir") = "");
}
