#include "uotalign/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace uotalign::oracle {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double xlogx(double x)
{
    return x > 0.0 ? x * std::log(x) : 0.0;
}

double kl_term(double w, double z)
{
    return xlogx(w) - w * std::log(z) - w + z;
}

// Maps free grid coordinates to a full coupling; entries implied by hard
// marginals are filled in last.
class Parameterization {
public:
    explicit Parameterization(const TransportProblem& p)
        : rows_(p.rows()), cols_(p.cols()), hard_rows_(std::isinf(p.rho1)), hard_cols_(std::isinf(p.rho2)),
          source_(p.source), target_(p.target)
    {
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j)
                if (is_free(i, j)) free_.push_back(i * cols_ + j);
    }

    std::size_t dims() const { return free_.size(); }

    // Returns false if an implied entry is negative.
    bool fill(const std::vector<double>& x, std::vector<double>& w) const
    {
        std::fill(w.begin(), w.end(), 0.0);
        for (std::size_t k = 0; k < free_.size(); ++k) w[free_[k]] = x[k];
        if (hard_rows_ && hard_cols_) {
            for (std::size_t i = 0; i + 1 < rows_; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j + 1 < cols_; ++j) s += w[i * cols_ + j];
                w[i * cols_ + cols_ - 1] = source_[i] - s;
            }
            for (std::size_t j = 0; j < cols_; ++j) {
                double s = 0.0;
                for (std::size_t i = 0; i + 1 < rows_; ++i) s += w[i * cols_ + j];
                w[(rows_ - 1) * cols_ + j] = target_[j] - s;
            }
        } else if (hard_rows_) {
            for (std::size_t i = 0; i < rows_; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j + 1 < cols_; ++j) s += w[i * cols_ + j];
                w[i * cols_ + cols_ - 1] = source_[i] - s;
            }
        } else if (hard_cols_) {
            for (std::size_t j = 0; j < cols_; ++j) {
                double s = 0.0;
                for (std::size_t i = 0; i + 1 < rows_; ++i) s += w[i * cols_ + j];
                w[(rows_ - 1) * cols_ + j] = target_[j] - s;
            }
        }
        for (double e : w)
            if (e < -1e-15) return false;
        for (double& e : w) e = std::max(e, 0.0);
        return true;
    }

private:
    bool is_free(std::size_t i, std::size_t j) const
    {
        if (hard_rows_ && j + 1 == cols_) return false;
        if (hard_cols_ && i + 1 == rows_) return false;
        return true;
    }

    std::size_t rows_, cols_;
    bool hard_rows_, hard_cols_;
    Vec source_, target_;
    std::vector<std::size_t> free_;
};

double objective_raw(const double* w, const TransportProblem& p)
{
    const std::size_t r = p.rows(), c = p.cols();
    const bool hard_rows = std::isinf(p.rho1), hard_cols = std::isinf(p.rho2);
    double value = 0.0;
    double total = 0.0;
    for (std::size_t k = 0; k < r * c; ++k) {
        const double x = w[k];
        if (x < 0.0) return kInf;
        value += x * p.cost.flat()[k] + p.lambda * xlogx(x);
        total += x;
    }
    if (!hard_rows && !hard_cols) value -= p.lambda * total;
    for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += w[i * c + j];
        if (hard_rows) {
            if (std::abs(s - p.source[i]) > 1e-12) return kInf;
        } else {
            value += p.rho1 * kl_term(s, p.source[i]);
        }
    }
    for (std::size_t j = 0; j < c; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < r; ++i) s += w[i * c + j];
        if (hard_cols) {
            if (std::abs(s - p.target[j]) > 1e-12) return kInf;
        } else {
            value += p.rho2 * kl_term(s, p.target[j]);
        }
    }
    return value;
}

}  // namespace

double objective(const Mat& w, const TransportProblem& p)
{
    if (w.rows() != p.rows() || w.cols() != p.cols()) throw Error("oracle objective: shape mismatch");
    return objective_raw(w.flat().data(), p);
}

GridResult grid_minimize(const TransportProblem& p, const GridSpec& spec)
{
    if (p.rows() * p.cols() > kOracleCap) throw Error("oracle cap exceeded");
    if (spec.resolution < 3 || spec.refinement_rounds < 1) throw Error("grid spec: resolution >= 3 and rounds >= 1 required");
    if (p.balanced() && std::abs(p.source.sum() - p.target.sum()) > 1e-12) throw Error("marginal mass mismatch");

    const double upper = spec.mass_upper_bound > 0.0 ? spec.mass_upper_bound
                                                     : 2.0 * std::max(p.source.sum(), p.target.sum());
    const Parameterization param(p);
    const std::size_t dims = param.dims();
    const int res = spec.resolution;

    std::vector<double> lo(dims, 0.0), hi(dims, upper);
    std::vector<double> best_x(dims, 0.0);
    std::vector<double> w(p.rows() * p.cols());
    std::vector<double> best_w(w.size());
    GridResult result;
    result.value = kInf;

    auto evaluate = [&](const std::vector<double>& x) {
        ++result.evaluations;
        if (!param.fill(x, w)) return;
        const double value = objective_raw(w.data(), p);
        if (value < result.value) {
            result.value = value;
            best_w = w;
            best_x = x;
        }
    };

    if (dims == 0) {
        evaluate({});
        if (!std::isfinite(result.value)) throw Error("oracle: no feasible coupling");
        result.coupling = Mat(p.rows(), p.cols(), best_w);
        return result;
    }

    // Each round scans the window; a shrink only happens once the incumbent is
    // interior, so an edge incumbent just recentres the window.
    int shrinks = 0;
    const int max_rounds = spec.refinement_rounds * 16;
    std::vector<double> x(dims);
    std::vector<int> idx(dims);
    for (int round = 0; round < max_rounds && shrinks < spec.refinement_rounds; ++round) {
        std::vector<double> step(dims);
        for (std::size_t k = 0; k < dims; ++k) step[k] = (hi[k] - lo[k]) / (res - 1);
        std::fill(idx.begin(), idx.end(), 0);
        while (true) {
            for (std::size_t k = 0; k < dims; ++k) x[k] = lo[k] + step[k] * idx[k];
            evaluate(x);
            std::size_t k = 0;
            while (k < dims && ++idx[k] == res) idx[k++] = 0;
            if (k == dims) break;
        }
        if (!std::isfinite(result.value)) throw Error("oracle: no feasible coupling on grid");

        bool on_edge = false;
        for (std::size_t k = 0; k < dims; ++k) {
            const bool at_lo = best_x[k] <= lo[k] + 0.5 * step[k] && lo[k] > 0.0;
            const bool at_hi = best_x[k] >= hi[k] - 0.5 * step[k] && hi[k] < upper;
            on_edge = on_edge || at_lo || at_hi;
        }
        const double half_width_steps = on_edge ? 0.5 * (res - 1) : 2.0;
        if (!on_edge) ++shrinks;
        for (std::size_t k = 0; k < dims; ++k) {
            const double half = half_width_steps * step[k];
            lo[k] = std::max(0.0, best_x[k] - half);
            hi[k] = std::min(upper, best_x[k] + half);
        }
    }
    result.coupling = Mat(p.rows(), p.cols(), best_w);
    return result;
}

Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x, double step)
{
    if (!(step > 0.0)) throw Error("finite_diff_grad: step must be positive");
    Vec grad(x.size());
    Vec probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + step;
        const double up = f(probe);
        probe[i] = x[i] - step;
        const double down = f(probe);
        probe[i] = x[i];
        if (!std::isfinite(up) || !std::isfinite(down))
            throw Error("finite_diff_grad: non-finite evaluation at coordinate " + std::to_string(i));
        grad[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

}  // namespace uotalign::oracle
