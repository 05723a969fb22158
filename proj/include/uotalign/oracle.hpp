#pragma once

#include <functional>

#include "uotalign/numerics.hpp"
#include "uotalign/transport.hpp"

// Brute-force verifiers. Nothing here calls into the solver or its objective.
namespace uotalign::oracle {

struct GridSpec {
    // <= 0 selects 2 * max(sum n, sum m).
    double mass_upper_bound = 0.0;
    int resolution = 21;
    int refinement_rounds = 4;
};

struct GridResult {
    Mat coupling;
    double value = 0.0;
    long long evaluations = 0;
};

// Largest rows * cols the grid search accepts.
inline constexpr std::size_t kOracleCap = 6;

// Exhaustive grid search over nonnegative couplings, zooming in around the
// incumbent each round. Hard marginals are eliminated: the last entry of each
// constrained row/column is implied by the others.
GridResult grid_minimize(const TransportProblem& p, const GridSpec& spec = {});

// Independent evaluation of the entropic (U)OT objective used by grid_minimize.
// Returns +inf for couplings that violate a hard marginal by more than 1e-12.
double objective(const Mat& w, const TransportProblem& p);

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h.
Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x, double step);

}  // namespace uotalign::oracle
