#include "uotalign/transport.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace uotalign {

namespace {

// log(1e-300): floor for an empty row or column sum.
const double kLogSumFloor = std::log(1e-300);

double update_factor(double lambda, double rho)
{
    return std::isinf(rho) ? lambda : lambda * rho / (lambda + rho);
}

// Value without the feasibility check of the public entry point.
double primal_objective(const Mat& w, const TransportProblem& p)
{
    double transported = 0.0;
    double neg_entropy = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
        const double x = w.flat()[k];
        transported += x * p.cost.flat()[k];
        if (x > 0.0) neg_entropy += x * std::log(x);
    }
    double value = transported + p.lambda * neg_entropy;
    const bool hard1 = std::isinf(p.rho1);
    const bool hard2 = std::isinf(p.rho2);
    if (!hard1 && !hard2) value -= p.lambda * w.sum();
    if (!hard1) value += p.rho1 * generalized_kl(w.row_sums(), p.source);
    if (!hard2) value += p.rho2 * generalized_kl(w.col_sums(), p.target);
    return value;
}

class ScalingState {
public:
    ScalingState(const TransportProblem& p, const SolverConfig& cfg)
        : p_(p), cfg_(cfg), u_(p.rows(), 0.0), v_(p.cols(), 0.0),
          log_source_(p.rows()), log_target_(p.cols()), scratch_(std::max(p.rows(), p.cols()))
    {
        p.validate();
        for (std::size_t i = 0; i < p.rows(); ++i) log_source_[i] = std::log(p.source[i]);
        for (std::size_t j = 0; j < p.cols(); ++j) log_target_[j] = std::log(p.target[j]);
    }

    bool done() const { return done_; }

    // One pass of the u update followed by the v update.
    void step()
    {
        const double lambda = p_.lambda;
        const std::size_t rows = p_.rows(), cols = p_.cols();
        const double f1 = update_factor(lambda, p_.rho1);
        const double f2 = update_factor(lambda, p_.rho2);
        ++iteration_;

        double du = 0.0;
        std::vector<double> u_next(rows);
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) scratch_[j] = (u_[i] + v_[j] - p_.cost(i, j)) / lambda;
            const double log_row = clamp_log(logsumexp({scratch_.data(), cols}));
            u_next[i] = (u_[i] / lambda + log_source_[i] - log_row) * f1;
            check_finite(u_next[i]);
            du = std::max(du, std::abs(u_next[i] - u_[i]));
        }
        u_.swap(u_next);

        double dv = 0.0;
        std::vector<double> v_next(cols);
        for (std::size_t j = 0; j < cols; ++j) {
            for (std::size_t i = 0; i < rows; ++i) scratch_[i] = (u_[i] + v_[j] - p_.cost(i, j)) / lambda;
            const double log_col = clamp_log(logsumexp({scratch_.data(), rows}));
            v_next[j] = (v_[j] / lambda + log_target_[j] - log_col) * f2;
            check_finite(v_next[j]);
            dv = std::max(dv, std::abs(v_next[j] - v_[j]));
        }
        v_.swap(v_next);

        if (cfg_.record_dual_trace) trace_.push_back(dual_value(Vec(u_), Vec(v_), p_));

        if (du < cfg_.dual_tolerance && dv < cfg_.dual_tolerance) {
            converged_ = true;
            done_ = true;
        } else if (iteration_ >= cfg_.max_iterations) {
            done_ = true;
        }
    }

    TransportPlan finish() const
    {
        TransportPlan plan;
        plan.u = Vec(u_);
        plan.v = Vec(v_);
        plan.coupling = recover_coupling(plan.u, plan.v, p_.cost, p_.lambda);
        plan.iterations = iteration_;
        plan.converged = converged_;
        plan.support_clamped = clamped_;
        plan.primal_value = primal_objective(plan.coupling, p_);
        plan.dual_trace = trace_;
        return plan;
    }

private:
    double clamp_log(double log_sum)
    {
        if (log_sum < kLogSumFloor) {
            clamped_ = true;
            return kLogSumFloor;
        }
        return log_sum;
    }

    void check_finite(double x) const
    {
        if (!std::isfinite(x)) throw Error("numerical blowup at iteration " + std::to_string(iteration_));
    }

    const TransportProblem& p_;
    const SolverConfig& cfg_;
    std::vector<double> u_, v_;
    std::vector<double> log_source_, log_target_;
    std::vector<double> scratch_;
    std::vector<double> trace_;
    int iteration_ = 0;
    bool converged_ = false;
    bool clamped_ = false;
    bool done_ = false;
};

void require_solver_config(const SolverConfig& cfg)
{
    if (cfg.max_iterations < 1) throw Error("solver config: max_iterations must be >= 1");
    if (!(cfg.dual_tolerance > 0.0)) throw Error("solver config: dual_tolerance must be > 0");
}

void solve_range(const std::vector<TransportProblem>& problems, const SolverConfig& cfg,
                 std::vector<BatchResult>& out, std::size_t begin, std::size_t end)
{
    std::vector<std::optional<ScalingState>> states(end - begin);
    for (std::size_t k = begin; k < end; ++k) {
        try {
            states[k - begin].emplace(problems[k], cfg);
        } catch (const std::exception& e) {
            out[k].error = e.what();
        }
    }
    bool any_active = true;
    while (any_active) {
        any_active = false;
        for (std::size_t k = begin; k < end; ++k) {
            auto& s = states[k - begin];
            if (!s || s->done()) continue;
            try {
                s->step();
                if (s->done()) out[k].plan = s->finish();
                else any_active = true;
            } catch (const std::exception& e) {
                out[k].error = e.what();
                s.reset();
            }
        }
    }
}

}  // namespace

bool TransportProblem::balanced() const
{
    return std::isinf(rho1) && std::isinf(rho2);
}

void TransportProblem::validate() const
{
    if (cost.rows() == 0 || cost.cols() == 0) throw Error("transport problem: empty cost matrix");
    if (source.size() != cost.rows() || target.size() != cost.cols()) {
        throw Error("transport problem: marginal shapes do not match cost " +
                    std::to_string(cost.rows()) + "x" + std::to_string(cost.cols()));
    }
    if (!(lambda > 0.0) || std::isinf(lambda)) throw Error("transport problem: lambda must be positive and finite");
    if (!(rho1 > 0.0) || !(rho2 > 0.0)) throw Error("transport problem: rho must be positive or infinite");
    for (double x : source) {
        if (x == 0.0) throw Error("zero marginal mass");
        if (x < 0.0) throw Error("negative mass");
    }
    for (double x : target) {
        if (x == 0.0) throw Error("zero marginal mass");
        if (x < 0.0) throw Error("negative mass");
    }
}

TransportPlan solve_uot(const TransportProblem& p, const SolverConfig& cfg)
{
    require_solver_config(cfg);
    ScalingState state(p, cfg);
    while (!state.done()) state.step();
    return state.finish();
}

TransportPlan solve_entropic_ot(const Mat& cost, const Vec& source, const Vec& target,
                                double lambda, const SolverConfig& cfg)
{
    if (std::abs(source.sum() - target.sum()) > 1e-9) throw Error("marginal mass mismatch");
    return solve_uot(TransportProblem{cost, source, target, lambda, kInfRho, kInfRho}, cfg);
}

Mat recover_coupling(const Vec& u, const Vec& v, const Mat& cost, double lambda)
{
    if (u.size() != cost.rows() || v.size() != cost.cols()) throw Error("recover_coupling: shape mismatch");
    std::vector<double> w(cost.size());
    for (std::size_t i = 0; i < cost.rows(); ++i)
        for (std::size_t j = 0; j < cost.cols(); ++j) {
            const double x = std::exp((u[i] + v[j] - cost(i, j)) / lambda);
            if (!std::isfinite(x)) throw Error("numerical blowup in coupling recovery");
            w[i * cost.cols() + j] = x;
        }
    return Mat(cost.rows(), cost.cols(), std::move(w));
}

double uot_primal_value(const Mat& w, const TransportProblem& p)
{
    if (w.rows() != p.rows() || w.cols() != p.cols()) throw Error("uot_primal_value: shape mismatch");
    for (double x : w.flat())
        if (x < 0.0) throw Error("negative mass");
    auto l1_gap = [](const Vec& a, const Vec& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
        return s;
    };
    if (std::isinf(p.rho1) && l1_gap(w.row_sums(), p.source) > kFeasibilityTolerance)
        throw Error("marginal constraint violated (rows)");
    if (std::isinf(p.rho2) && l1_gap(w.col_sums(), p.target) > kFeasibilityTolerance)
        throw Error("marginal constraint violated (columns)");
    return primal_objective(w, p);
}

double dual_value(const Vec& u, const Vec& v, const TransportProblem& p)
{
    if (u.size() != p.rows() || v.size() != p.cols()) throw Error("dual_value: shape mismatch");
    double value = 0.0;
    for (std::size_t i = 0; i < p.rows(); ++i)
        for (std::size_t j = 0; j < p.cols(); ++j)
            value += p.lambda * std::exp((u[i] + v[j] - p.cost(i, j)) / p.lambda);
    for (std::size_t i = 0; i < p.rows(); ++i)
        value += std::isinf(p.rho1) ? -u[i] * p.source[i] : p.rho1 * std::exp(-u[i] / p.rho1) * p.source[i];
    for (std::size_t j = 0; j < p.cols(); ++j)
        value += std::isinf(p.rho2) ? -v[j] * p.target[j] : p.rho2 * std::exp(-v[j] / p.rho2) * p.target[j];
    if (!std::isfinite(value)) throw Error("numerical blowup in dual objective");
    return value;
}

std::vector<BatchResult> solve_uot_batch(const std::vector<TransportProblem>& problems,
                                         const SolverConfig& cfg)
{
    require_solver_config(cfg);
    if (!problems.empty()) {
        const auto& first = problems.front();
        for (const auto& p : problems) {
            const bool same_rho = (p.rho1 == first.rho1) && (p.rho2 == first.rho2);
            if (p.rows() != first.rows() || p.cols() != first.cols() || p.lambda != first.lambda || !same_rho)
                throw Error("solve_uot_batch: problems must share shape, lambda and rho");
        }
    }
    std::vector<BatchResult> out(problems.size());
    const std::size_t workers =
        std::clamp<std::size_t>(static_cast<std::size_t>(std::max(cfg.threads, 1)), 1, std::max<std::size_t>(problems.size(), 1));
    if (workers == 1) {
        solve_range(problems, cfg, out, 0, problems.size());
        return out;
    }
    {
        std::vector<std::jthread> pool;
        const std::size_t chunk = (problems.size() + workers - 1) / workers;
        for (std::size_t begin = 0; begin < problems.size(); begin += chunk) {
            const std::size_t end = std::min(problems.size(), begin + chunk);
            pool.emplace_back([&, begin, end] { solve_range(problems, cfg, out, begin, end); });
        }
    }
    return out;
}

const Mat& gradient_wrt_cost(const TransportPlan& plan)
{
    if (!plan.converged) throw Error("gradient at non-optimum");
    return plan.coupling;
}

}  // namespace uotalign
