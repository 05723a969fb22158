#pragma once

#include <cstdint>
#include <vector>

#include "uotalign/transport.hpp"

namespace uotalign {

// Prompts against images where only the first `matches` images correspond to
// a prompt; the remaining images are random negatives.
struct OutlierSpec {
    std::size_t prompts = 4;
    std::size_t images = 20;
    std::size_t matches = 4;
    std::size_t dim = 32;
    double noise = 0.1;
    std::uint64_t seed = 0;
    double lambda = 0.01;
    double rho1 = kInfRho;
    double rho2 = 0.04;

    void validate() const;
};

struct OutlierInstance {
    Mat prompts;  // prompts x dim, unit rows
    Mat images;   // images x dim, unit rows
    // Image j < matches is a noisy copy of prompt j % prompts.
    std::vector<std::size_t> outlier_columns;
    TransportProblem balanced;
    TransportProblem unbalanced;
};

OutlierInstance build_outlier_instance(const OutlierSpec& spec);

// Mass on the listed columns as a fraction of the coupling's total mass.
double column_mass_fraction(const Mat& coupling, const std::vector<std::size_t>& columns);

struct OutlierComparison {
    OutlierInstance instance;
    TransportPlan ot;
    TransportPlan uot;
    double ot_outlier_mass = 0.0;
    double uot_outlier_mass = 0.0;
};

OutlierComparison compare_outliers(const OutlierSpec& spec, const SolverConfig& cfg);

}  // namespace uotalign
