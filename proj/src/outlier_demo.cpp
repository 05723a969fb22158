#include "uotalign/outlier_demo.hpp"

#include <cmath>
#include <random>

#include "uotalign/seeding.hpp"

namespace uotalign {

namespace {

void normalize_row(std::span<double> row)
{
    const double n = norm2(row);
    if (n == 0.0) throw Error("degenerate embedding");
    for (double& x : row) x /= n;
}

}  // namespace

void OutlierSpec::validate() const
{
    if (prompts == 0 || images == 0 || dim == 0) throw Error("outlier spec: counts must be >= 1");
    if (matches > images) throw Error("outlier spec: more matches than images");
    if (!(noise >= 0.0)) throw Error("outlier spec: noise must be >= 0");
    if (!(lambda > 0.0)) throw Error("outlier spec: lambda must be > 0");
    if (!(rho1 > 0.0) || !(rho2 > 0.0)) throw Error("outlier spec: rho must be > 0 or inf");
}

OutlierInstance build_outlier_instance(const OutlierSpec& spec)
{
    spec.validate();
    std::mt19937_64 prompt_rng(mix_seed(spec.seed, 1));
    std::mt19937_64 image_rng(mix_seed(spec.seed, 2));
    std::normal_distribution<double> normal(0.0, 1.0);

    OutlierInstance inst;
    inst.prompts = Mat(spec.prompts, spec.dim);
    for (std::size_t i = 0; i < spec.prompts; ++i) {
        for (double& x : inst.prompts.row(i)) x = normal(prompt_rng);
        normalize_row(inst.prompts.row(i));
    }
    inst.images = Mat(spec.images, spec.dim);
    for (std::size_t j = 0; j < spec.images; ++j) {
        auto row = inst.images.row(j);
        if (j < spec.matches) {
            const auto src = inst.prompts.row(j % spec.prompts);
            for (std::size_t k = 0; k < spec.dim; ++k) row[k] = src[k] + spec.noise * normal(image_rng);
        } else {
            for (double& x : row) x = normal(image_rng);
            inst.outlier_columns.push_back(j);
        }
        normalize_row(row);
    }

    Mat cost = cosine_matrix(inst.prompts, inst.images);
    for (double& x : cost.flat()) x = 1.0 - x;

    TransportProblem p;
    p.cost = std::move(cost);
    p.source = Vec(spec.prompts, 1.0 / static_cast<double>(spec.prompts));
    p.target = Vec(spec.images, 1.0 / static_cast<double>(spec.images));
    p.lambda = spec.lambda;
    p.rho1 = kInfRho;
    p.rho2 = kInfRho;
    inst.balanced = p;
    p.rho1 = spec.rho1;
    p.rho2 = spec.rho2;
    inst.unbalanced = std::move(p);
    return inst;
}

double column_mass_fraction(const Mat& coupling, const std::vector<std::size_t>& columns)
{
    const double total = coupling.sum();
    if (!(total > 0.0)) throw Error("coupling has no mass");
    double mass = 0.0;
    for (std::size_t j : columns) {
        if (j >= coupling.cols()) throw Error("column index out of range: " + std::to_string(j));
        for (std::size_t i = 0; i < coupling.rows(); ++i) mass += coupling(i, j);
    }
    return mass / total;
}

OutlierComparison compare_outliers(const OutlierSpec& spec, const SolverConfig& cfg)
{
    OutlierComparison out;
    out.instance = build_outlier_instance(spec);
    out.ot = solve_uot(out.instance.balanced, cfg);
    out.uot = solve_uot(out.instance.unbalanced, cfg);
    out.ot_outlier_mass = column_mass_fraction(out.ot.coupling, out.instance.outlier_columns);
    out.uot_outlier_mass = column_mass_fraction(out.uot.coupling, out.instance.outlier_columns);
    return out;
}

}  // namespace uotalign
