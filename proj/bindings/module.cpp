#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <span>
#include <vector>

#include "iovqa/codec.hpp"
#include "iovqa/curation.hpp"
#include "iovqa/errors.hpp"
#include "iovqa/evalkit.hpp"
#include "iovqa/rng.hpp"
#include "iovqa/scorer.hpp"
#include "iovqa/synthetic.hpp"
#include "iovqa/trainer.hpp"

namespace py = pybind11;
using namespace iovqa;

namespace {

double py_srcc(const std::vector<double>& a, const std::vector<double>& b) {
    return srcc(std::span<const double>(a), std::span<const double>(b));
}

double py_plcc(const std::vector<double>& a, const std::vector<double>& b) {
    return plcc(std::span<const double>(a), std::span<const double>(b));
}

double py_grade_expectation(const std::vector<double>& logits) {
    if (logits.size() != 5)
        throw InvalidArgument("grade_expectation: exactly 5 logits expected");
    Eigen::Matrix<double, 1, 5> row;
    for (int i = 0; i < 5; ++i) row(0, i) = logits[i];
    return grade_expectation(row);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "integer-label video quality scoring toolkit";

    py::register_exception<InvalidArgument>(m, "InvalidArgumentError", PyExc_ValueError);
    py::register_exception<ScoreFormatError>(m, "ScoreFormatError", PyExc_ValueError);
    py::register_exception<ScoreRangeError>(m, "ScoreRangeError", PyExc_ValueError);
    py::register_exception<DegenerateInput>(m, "DegenerateInputError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    m.def("mos_to_label", &mos_to_label, py::arg("mos"),
          "MOS in [1,5] -> integer label in [10,50] (x10, half away from zero)");
    m.def("label_to_mos", &label_to_mos, py::arg("label"));
    m.def("parse_score_output",
          [](const std::string& text, bool lenient) {
              return parse_score_output(text,
                                        lenient ? ParseMode::lenient : ParseMode::strict);
          },
          py::arg("text"), py::arg("lenient") = false);

    m.def("srcc", &py_srcc, py::arg("a"), py::arg("b"));
    m.def("plcc", &py_plcc, py::arg("a"), py::arg("b"));
    m.def("final_score", &final_score, py::arg("srcc"), py::arg("plcc"));
    m.def("grade_expectation", &py_grade_expectation, py::arg("logits"),
          "probability-weighted sum of grades 1..5 from 5 logits");

    py::class_<ScoreVector>(m, "ScoreVector")
        .def(py::init<>())
        .def(py::init([](std::vector<std::string> ids, std::vector<double> values) {
                 ScoreVector v;
                 v.item_ids = std::move(ids);
                 v.values = std::move(values);
                 return v;
             }),
             py::arg("item_ids"), py::arg("values"))
        .def_readwrite("item_ids", &ScoreVector::item_ids)
        .def_readwrite("values", &ScoreVector::values);

    py::class_<EnsembleMember>(m, "EnsembleMember")
        .def(py::init([](std::string name, double weight, std::string scale) {
                 return EnsembleMember{std::move(name), weight, std::move(scale)};
             }),
             py::arg("name"), py::arg("weight"), py::arg("scale") = "mos_1_5")
        .def_readwrite("name", &EnsembleMember::name)
        .def_readwrite("weight", &EnsembleMember::weight)
        .def_readwrite("scale", &EnsembleMember::scale);

    py::class_<EnsembleSpec>(m, "EnsembleSpec")
        .def(py::init<>())
        .def_static("challenge_default", &EnsembleSpec::challenge_default)
        .def_static("load", &EnsembleSpec::load, py::arg("path"))
        .def("save", &EnsembleSpec::save, py::arg("path"))
        .def("validate", &EnsembleSpec::validate)
        .def_readwrite("members", &EnsembleSpec::members);

    m.def("ensemble", &ensemble, py::arg("member_scores"), py::arg("spec"),
          "weighted member mix on the 1..5 scale, sorted by item id");
    m.def("evaluate",
          [](const ScoreVector& pred, const ScoreVector& truth) {
              const EvalSummary s = evaluate(pred, truth);
              return py::make_tuple(s.srcc, s.plcc, s.final);
          },
          py::arg("predictions"), py::arg("ground_truth"),
          "(srcc, plcc, final) after id alignment");

    m.def("lr_at",
          [](long long step, long long total_steps, double learning_rate, double warmup_ratio) {
              TrainConfig cfg;
              cfg.learning_rate = learning_rate;
              cfg.warmup_ratio = warmup_ratio;
              return lr_at(step, total_steps, cfg);
          },
          py::arg("step"), py::arg("total_steps"), py::arg("learning_rate") = 3e-4,
          py::arg("warmup_ratio") = 0.1,
          "linear warmup then cosine decay to exactly zero");

    m.def("derive_seed", &derive_seed, py::arg("seed"), py::arg("key"));
    m.def("simulate_annotators",
          [](double latent_quality, double noise_sd, std::uint64_t seed) {
              const AnnotationPanel p = simulate_annotators(latent_quality, noise_sd, seed);
              std::vector<bool> kept(p.kept_mask.begin(), p.kept_mask.end());
              return py::make_tuple(p.ratings, kept, p.mos);
          },
          py::arg("latent_quality"), py::arg("noise_sd"), py::arg("seed"),
          "(ratings, kept_mask, mos) for one 15-rater panel");
}
