// Python bindings for the core operations: dataset generation, training,
// certification, bounds and Monte-Carlo verification.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "grustab/bounds.hpp"
#include "grustab/certificates.hpp"
#include "grustab/gru.hpp"
#include "grustab/plant.hpp"
#include "grustab/training.hpp"
#include "grustab/verify.hpp"

namespace py = pybind11;
using namespace grustab;

namespace {

py::dict outcome_dict(const VerificationOutcome& o) {
    py::dict d;
    d["check"] = o.check;
    d["trials"] = o.trials;
    d["violations"] = o.violations;
    d["worst_margin"] = o.worst_margin;
    d["passed"] = o.passed();
    return d;
}

py::dict report_dict(const StabilityReport& rep) {
    py::dict d;
    d["mode"] = to_string(rep.mode);
    d["certified"] = rep.certified();
    py::list layers;
    for (const auto& l : rep.layers) {
        py::dict lj;
        lj["iss_lhs"] = l.iss_lhs;
        lj["nu"] = l.nu;
        lj["iss_certified"] = l.iss_certified;
        lj["delta_iss_certified"] = l.delta_iss_certified;
        layers.append(lj);
    }
    d["layers"] = layers;
    return d;
}

VerificationPlan make_plan(std::size_t trials, std::size_t horizon,
                           std::uint64_t seed) {
    VerificationPlan plan;
    plan.trials = trials;
    plan.horizon = horizon;
    plan.seed = seed;
    return plan;
}

}  // namespace

PYBIND11_MODULE(_grustab, mod) {
    mod.doc() = "Stability-certified GRU system identification";

    py::class_<DeepGruModel>(mod, "Model")
        .def_static("load", &load_model, py::arg("path"))
        .def_static("from_json", &model_from_json, py::arg("text"))
        .def_static(
            "zeros",
            [](const std::vector<std::size_t>& widths, std::size_t n_u,
               std::size_t n_o) { return DeepGruModel::zeros(widths, n_u, n_o); },
            py::arg("widths"), py::arg("n_u"), py::arg("n_o"))
        .def_static(
            "random",
            [](const std::vector<std::size_t>& widths, std::size_t n_u,
               std::size_t n_o, double weight_range, std::uint64_t seed) {
                Rng rng(seed);
                return random_model(widths, n_u, n_o, weight_range, rng);
            },
            py::arg("widths"), py::arg("n_u"), py::arg("n_o"),
            py::arg("weight_range"), py::arg("seed"))
        .def(
            "save",
            [](const DeepGruModel& m, const std::string& path) { save_model(m, path); },
            py::arg("path"))
        .def("to_json", &model_to_json)
        .def_property_readonly("depth", &DeepGruModel::depth)
        .def_property_readonly("input_size", &DeepGruModel::input_size)
        .def_property_readonly("output_size", &DeepGruModel::output_size)
        .def("residuals", &layer_residuals)
        .def(
            "certify",
            [](const DeepGruModel& m, const std::string& mode,
               const std::vector<double>& lambdas) {
                CertifyMode cm = CertifyMode::delta_iss_relaxed;
                if (mode == "iss") cm = CertifyMode::iss;
                if (mode == "strict") cm = CertifyMode::delta_iss_strict;
                return report_dict(certify_deep(m, cm, lambdas));
            },
            py::arg("mode") = "relaxed", py::arg("lambdas") = std::vector<double>{})
        .def(
            "simulate",
            [](const DeepGruModel& m, const std::vector<Vector>& inputs) {
                const auto traj = simulate(m, GruState::zero(m), inputs);
                return traj.outputs;
            },
            py::arg("inputs"))
        .def(
            "verify_invariance",
            [](const DeepGruModel& m, std::size_t trials, std::size_t horizon,
               std::uint64_t seed) {
                return outcome_dict(verify_invariance(m, make_plan(trials, horizon, seed)));
            },
            py::arg("trials") = 2000, py::arg("horizon") = 500, py::arg("seed") = 0)
        .def(
            "verify_delta_iss",
            [](const DeepGruModel& m, std::size_t trials, std::size_t horizon,
               std::uint64_t seed) {
                return outcome_dict(
                    verify_delta_iss_bound(m, make_plan(trials, horizon, seed)));
            },
            py::arg("trials") = 2000, py::arg("horizon") = 500, py::arg("seed") = 0);

    mod.def(
        "generate_dataset",
        [](const std::string& out_dir, const std::string& preset,
           std::uint64_t seed) {
            TankConfig tank;
            const auto proto = preset == "desk" ? DatasetProtocol::desk()
                                                : DatasetProtocol::paper();
            const auto d = generate_dataset(tank, proto, seed);
            save_dataset(d, out_dir);
            return d.experiments.size();
        },
        py::arg("out_dir"), py::arg("preset") = "desk", py::arg("seed") = 0);

    mod.def(
        "train",
        [](const std::string& data_dir, const std::vector<std::size_t>& widths,
           std::uint64_t seed, std::size_t max_epochs, bool penalty) {
            const Dataset d = load_dataset(data_dir);
            TrainConfig cfg;
            cfg.seed = seed;
            cfg.max_epochs = max_epochs;
            if (!penalty) {
                cfg.rho_plus = 0.0;
                cfg.rho_minus = 0.0;
            }
            auto result = grustab::train(d, widths, cfg);
            return py::make_tuple(result.model, history_to_csv(result.history));
        },
        py::arg("data_dir"), py::arg("widths"), py::arg("seed") = 0,
        py::arg("max_epochs") = 2000, py::arg("penalty") = true);

    mod.def("delta_iss_residual", &relaxed_delta_iss_residual, py::arg("layer"));
    mod.def(
        "tank_equilibrium",
        [](double q_a, double q_b) {
            TankConfig cfg;
            const auto eq = tank_equilibrium(cfg, q_a, q_b);
            return std::vector<double>(eq.h.begin(), eq.h.end());
        },
        py::arg("q_a"), py::arg("q_b"));
}
