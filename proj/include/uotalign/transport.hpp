#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "uotalign/numerics.hpp"

namespace uotalign {

// Marks a hard marginal constraint (rho -> infinity).
inline constexpr double kInfRho = std::numeric_limits<double>::infinity();

// Row-sum / column-sum L1 tolerance for balanced feasibility checks.
inline constexpr double kFeasibilityTolerance = 1e-6;

struct TransportProblem {
    Mat cost;
    Vec source;  // n, one entry per row of cost
    Vec target;  // m, one entry per column of cost
    double lambda = 0.1;
    double rho1 = kInfRho;
    double rho2 = kInfRho;

    std::size_t rows() const { return cost.rows(); }
    std::size_t cols() const { return cost.cols(); }
    bool balanced() const;

    // Throws on inconsistent shapes, lambda <= 0, rho <= 0 or non-positive marginals.
    void validate() const;
};

struct SolverConfig {
    int max_iterations = 2000;
    double dual_tolerance = 1e-9;
    // Record the dual objective after every iteration (diagnostics only).
    bool record_dual_trace = false;
    // Worker threads for batched solves. Results do not depend on this.
    int threads = 1;
};

struct TransportPlan {
    Mat coupling;
    Vec u;
    Vec v;
    int iterations = 0;
    bool converged = false;
    double primal_value = 0.0;
    // A row or column sum underflowed and was clamped during iteration.
    bool support_clamped = false;
    std::vector<double> dual_trace;
};

// Generalized matrix scaling in the dual: alternating closed-form updates of
// u then v, with the coupling recovered as exp((u_i + v_j - C_ij) / lambda).
TransportPlan solve_uot(const TransportProblem& p, const SolverConfig& cfg = {});

// Balanced entropic OT; solve_uot with both marginals hard.
TransportPlan solve_entropic_ot(const Mat& cost, const Vec& source, const Vec& target,
                                double lambda, const SolverConfig& cfg = {});

Mat recover_coupling(const Vec& u, const Vec& v, const Mat& cost, double lambda);

// Primal objective at w. A finite rho adds rho * KL(marginal || reference) and
// measures entropy as -sum(w log w - w), the form whose conjugate is the dual
// objective below. With an infinite rho the marginal is a constraint checked to
// kFeasibilityTolerance, total mass is fixed, and the value is <W,C> - lambda H(W).
double uot_primal_value(const Mat& w, const TransportProblem& p);

// Dual objective (minimized by the scaling iterations). Hard marginals use the
// linear form -<u, n> / -<v, m>.
double dual_value(const Vec& u, const Vec& v, const TransportProblem& p);

struct BatchResult {
    std::optional<TransportPlan> plan;
    std::string error;  // empty when plan is set

    bool ok() const { return plan.has_value(); }
};

// Lockstep solve of same-shape, same-parameter problems. Converged instances
// are frozen while the rest continue; failures are reported per instance.
std::vector<BatchResult> solve_uot_batch(const std::vector<TransportProblem>& problems,
                                         const SolverConfig& cfg = {});

// Envelope gradient of the optimal value with respect to the cost.
const Mat& gradient_wrt_cost(const TransportPlan& plan);

}  // namespace uotalign
