#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <iostream>

#include "uotalign/checkpoint.hpp"
#include "uotalign/classifier.hpp"
#include "uotalign/commands.hpp"
#include "uotalign/config.hpp"
#include "uotalign/features.hpp"
#include "uotalign/outlier_demo.hpp"
#include "uotalign/trainer.hpp"
#include "uotalign/transport.hpp"

namespace py = pybind11;
using namespace uotalign;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Mat to_mat(const Array& a)
{
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
    const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
    return Mat(r, c, std::vector<double>(a.data(), a.data() + r * c));
}

Vec to_vec(const Array& a)
{
    if (a.ndim() != 1) throw std::invalid_argument("expected a 1-d array");
    return Vec(std::vector<double>(a.data(), a.data() + a.shape(0)));
}

Array from_mat(const Mat& m)
{
    Array out({m.rows(), m.cols()});
    std::copy(m.flat().begin(), m.flat().end(), out.mutable_data());
    return out;
}

Array from_vec(const Vec& v)
{
    Array out(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

Vec uniform(std::size_t n)
{
    return Vec(n, 1.0 / static_cast<double>(n));
}

py::dict plan_dict(const TransportPlan& p)
{
    py::dict d;
    d["coupling"] = from_mat(p.coupling);
    d["u"] = from_vec(p.u);
    d["v"] = from_vec(p.v);
    d["iterations"] = p.iterations;
    d["converged"] = p.converged;
    d["primal_value"] = p.primal_value;
    d["support_clamped"] = p.support_clamped;
    return d;
}

py::dict metrics_dict(const Metrics& m)
{
    py::dict d;
    d["accuracy"] = m.accuracy;
    d["per_class"] = m.per_class;
    d["mean_loss"] = m.mean_loss;
    d["count"] = m.count;
    return d;
}

RunConfig config_from(const std::string& text)
{
    return text.empty() ? RunConfig{} : parse_config_text(text);
}

}  // namespace

PYBIND11_MODULE(_core, m)
{
    m.doc() = "Entropic OT/UOT solvers and dual-context prompt alignment";
    m.attr("INF") = kInfRho;

    py::register_exception<Error>(m, "UotalignError", PyExc_RuntimeError);

    m.def(
        "solve_uot",
        [](const Array& cost, std::optional<Array> source, std::optional<Array> target, double lam, double rho1,
           double rho2, int max_iterations, double dual_tolerance) {
            TransportProblem p;
            p.cost = to_mat(cost);
            p.source = source ? to_vec(*source) : uniform(p.cost.rows());
            p.target = target ? to_vec(*target) : uniform(p.cost.cols());
            p.lambda = lam;
            p.rho1 = rho1;
            p.rho2 = rho2;
            SolverConfig cfg;
            cfg.max_iterations = max_iterations;
            cfg.dual_tolerance = dual_tolerance;
            TransportPlan plan;
            {
                py::gil_scoped_release release;
                plan = solve_uot(p, cfg);
            }
            return plan_dict(plan);
        },
        py::arg("cost"), py::arg("source") = py::none(), py::arg("target") = py::none(), py::arg("lam") = 0.1,
        py::arg("rho1") = kInfRho, py::arg("rho2") = kInfRho, py::arg("max_iterations") = 2000,
        py::arg("dual_tolerance") = 1e-9);

    m.def(
        "primal_value",
        [](const Array& coupling, const Array& cost, const Array& source, const Array& target, double lam, double rho1,
           double rho2) {
            TransportProblem p{to_mat(cost), to_vec(source), to_vec(target), lam, rho1, rho2};
            return uot_primal_value(to_mat(coupling), p);
        },
        py::arg("coupling"), py::arg("cost"), py::arg("source"), py::arg("target"), py::arg("lam"),
        py::arg("rho1") = kInfRho, py::arg("rho2") = kInfRho);

    m.def(
        "cost_matrix", [](const Array& features, const Array& prompts) {
            return from_mat(cost_matrix(to_mat(features), to_mat(prompts)));
        },
        py::arg("features"), py::arg("prompts"));

    m.def(
        "likelihood", [](const Array& d, double tau) { return from_vec(likelihood(to_vec(d), tau)); }, py::arg("d"),
        py::arg("tau") = 0.01);

    m.def(
        "compare_outliers",
        [](std::size_t prompts, std::size_t images, std::size_t matches, std::uint64_t seed) {
            OutlierSpec spec;
            spec.prompts = prompts;
            spec.images = images;
            spec.matches = matches;
            spec.seed = seed;
            const auto r = compare_outliers(spec, SolverConfig{.max_iterations = 100000});
            py::dict d;
            d["ot"] = plan_dict(r.ot);
            d["uot"] = plan_dict(r.uot);
            d["ot_outlier_mass"] = r.ot_outlier_mass;
            d["uot_outlier_mass"] = r.uot_outlier_mass;
            d["outlier_columns"] = r.instance.outlier_columns;
            return d;
        },
        py::arg("prompts") = 4, py::arg("images") = 20, py::arg("matches") = 4, py::arg("seed") = 0);

    m.def("read_embedding", [](const std::filesystem::path& p) { return from_mat(read_embedding_file(p)); });
    m.def("write_embedding",
          [](const std::filesystem::path& p, const Array& a) { write_embedding_file(p, to_mat(a)); });

    m.def(
        "synth_dataset",
        [](const std::filesystem::path& out, std::size_t classes, std::size_t per_class, std::size_t tokens,
           std::size_t dim, double separation, std::uint64_t seed) {
            SynthOptions o;
            o.num_classes = classes;
            o.per_class = per_class;
            o.tokens = tokens;
            o.dim = dim;
            o.separation = separation;
            o.seed = seed;
            return synth_dataset(o, out).samples.size();
        },
        py::arg("out"), py::arg("classes") = 3, py::arg("per_class") = 20, py::arg("tokens") = 49,
        py::arg("dim") = 32, py::arg("separation") = 10.0, py::arg("seed") = 1);

    m.def(
        "train",
        [](const std::filesystem::path& manifest, const std::filesystem::path& checkpoint, const std::string& config) {
            const RunConfig cfg = config_from(config);
            const DatasetManifest man = read_manifest(manifest);
            TrainState st;
            {
                py::gil_scoped_release release;
                st = train(man, cfg.train, cfg.classifier);
            }
            save_checkpoint(checkpoint, st, cfg);
            py::list history;
            for (const auto& h : st.history) {
                py::dict d;
                d["epoch"] = h.epoch;
                d["loss"] = h.loss;
                d["accuracy"] = h.accuracy;
                history.append(d);
            }
            return history;
        },
        py::arg("manifest"), py::arg("checkpoint"), py::arg("config") = "");

    m.def(
        "evaluate",
        [](const std::filesystem::path& checkpoint, const std::filesystem::path& manifest, const std::string& split) {
            const Checkpoint ck = load_checkpoint(checkpoint);
            return metrics_dict(evaluate(read_manifest(manifest), split, ck.state, ck.config.classifier));
        },
        py::arg("checkpoint"), py::arg("manifest"), py::arg("split") = "test");

    m.def(
        "run_cli",
        [](std::vector<std::string> args) {
            args.insert(args.begin(), "uotalign");
            std::vector<char*> argv;
            for (auto& a : args) argv.push_back(a.data());
            return run_cli(static_cast<int>(argv.size()), argv.data(), std::cout, std::cerr);
        },
        py::arg("args"));
}
