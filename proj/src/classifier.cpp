#include "uotalign/classifier.hpp"

#include <cmath>

namespace uotalign {

void ClassifierConfig::validate() const
{
    if (!(tau > 0.0)) throw Error("classifier config: tau must be > 0");
    if (!(gamma_cs >= 0.0) || !(gamma_ds >= 0.0)) throw Error("classifier config: gammas must be >= 0");
    if (gamma_cs == 0.0 && gamma_ds == 0.0) throw Error("classifier config: at least one gamma must be > 0");
    if (!(lambda > 0.0)) throw Error("classifier config: lambda must be > 0");
    if (!(rho1 > 0.0) || !(rho2 > 0.0)) throw Error("classifier config: rho must be > 0 or inf");
}

Mat cost_matrix(const Mat& features, const Mat& prompts)
{
    Mat c = cosine_matrix(prompts, features);
    for (double& x : c.flat()) x = 1.0 - x;
    return c;
}

Mat cost_matrix_backward(const Mat& features, const Mat& prompts, const Mat& d_cost)
{
    if (d_cost.rows() != prompts.rows() || d_cost.cols() != features.rows())
        throw Error("cost_matrix_backward: shape mismatch");
    const std::size_t d = prompts.cols();
    Mat grad(prompts.rows(), d);
    std::vector<double> f_norm(features.rows());
    for (std::size_t j = 0; j < features.rows(); ++j) f_norm[j] = norm2(features.row(j));
    for (std::size_t p = 0; p < prompts.rows(); ++p) {
        const auto g = prompts.row(p);
        const double g_norm = norm2(g);
        if (g_norm == 0.0) throw Error("degenerate embedding");
        auto out = grad.row(p);
        for (std::size_t j = 0; j < features.rows(); ++j) {
            const double upstream = d_cost(p, j);
            if (upstream == 0.0) continue;
            const auto f = features.row(j);
            const double cos = dot(g, f) / (g_norm * f_norm[j]);
            // d(1 - cos)/dg = -(f/|f| - cos g/|g|) / |g|
            for (std::size_t k = 0; k < d; ++k)
                out[k] -= upstream * (f[k] / f_norm[j] - cos * g[k] / g_norm) / g_norm;
        }
    }
    return grad;
}

FeatureSet active_tokens(const FeatureSet& fs)
{
    std::size_t kept = 0;
    for (double w : fs.weights) kept += w > 0.0 ? 1 : 0;
    if (kept == fs.weights.size()) return fs;
    if (kept == 0) throw Error("zero marginal mass");
    FeatureSet out;
    out.label = fs.label;
    out.sample_id = fs.sample_id;
    out.features = Mat(kept, fs.features.cols());
    std::vector<double> weights;
    std::size_t r_out = 0;
    for (std::size_t r = 0; r < fs.weights.size(); ++r) {
        if (fs.weights[r] <= 0.0) continue;
        std::copy(fs.features.row(r).begin(), fs.features.row(r).end(), out.features.row(r_out++).begin());
        weights.push_back(fs.weights[r]);
    }
    out.weights = Vec(std::move(weights));
    return out;
}

double plan_distance(const TransportPlan& plan, const Mat& cost, DistanceKind kind)
{
    return kind == DistanceKind::regularized_value ? plan.primal_value : frobenius_dot(plan.coupling, cost);
}

TransportProblem alignment_problem(const Mat& cost, const Vec& visual_weights, const ClassifierConfig& cfg)
{
    TransportProblem p;
    p.cost = cost;
    p.source = Vec(cost.rows(), 1.0 / static_cast<double>(cost.rows()));
    p.target = visual_weights;
    p.lambda = cfg.lambda;
    p.rho1 = cfg.effective_rho1();
    p.rho2 = cfg.effective_rho2();
    return p;
}

AlignmentScore score(const FeatureSet& fs, const ClassEmbeddings& embeddings, const ClassifierConfig& cfg)
{
    cfg.validate();
    const FeatureSet active = active_tokens(fs);
    AlignmentScore s;
    if (cfg.gamma_cs > 0.0) {
        const Mat c = cost_matrix(active.features, embeddings.specific);
        s.plan_cs = solve_uot(alignment_problem(c, active.weights, cfg), cfg.solver);
        s.d_cs = plan_distance(s.plan_cs, c, cfg.distance);
    }
    if (cfg.gamma_ds > 0.0) {
        const Mat c = cost_matrix(active.features, embeddings.shared);
        s.plan_ds = solve_uot(alignment_problem(c, active.weights, cfg), cfg.solver);
        s.d_ds = plan_distance(s.plan_ds, c, cfg.distance);
    }
    s.d_total = cfg.gamma_cs * s.d_cs + cfg.gamma_ds * s.d_ds;
    return s;
}

AlignmentScore score(const FeatureSet& fs, std::string_view class_name, const PromptBank& bank,
                     const FrozenEncoder& encoder, const ClassifierConfig& cfg)
{
    const std::size_t idx = bank.class_index(class_name);
    try {
        return score(fs, build_class_embeddings(bank, idx, encoder), cfg);
    } catch (const Error& e) {
        throw Error(std::string(e.what()) + " (class " + std::string(class_name) + ")");
    }
}

Vec likelihood(const Vec& distances, double tau)
{
    if (distances.empty()) throw Error("likelihood: no classes");
    if (!(tau > 0.0)) throw Error("likelihood: tau must be > 0");
    std::vector<double> logits(distances.size());
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = (1.0 - distances[i]) / tau;
    const double lse = logsumexp(logits);
    for (double& x : logits) x = std::exp(x - lse);
    return Vec(std::move(logits));
}

double ce_loss(const Mat& probs, const Mat& labels, int* clamped)
{
    if (probs.rows() != labels.rows() || probs.cols() != labels.cols()) throw Error("ce_loss: shape mismatch");
    if (probs.rows() == 0) throw Error("ce_loss: empty batch");
    double loss = 0.0;
    int clamps = 0;
    for (std::size_t b = 0; b < probs.rows(); ++b)
        for (std::size_t k = 0; k < probs.cols(); ++k) {
            const double y = labels(b, k);
            if (y == 0.0) continue;
            double p = probs(b, k);
            if (p <= 0.0) {
                p = 1e-300;
                ++clamps;
            }
            loss -= y * std::log(p);
        }
    if (clamped) *clamped = clamps;
    return loss / static_cast<double>(probs.rows());
}

Vec zero_shot_likelihood(const Vec& global_feature, const Mat& class_embeddings, double tau)
{
    if (!(tau > 0.0)) throw Error("likelihood: tau must be > 0");
    Mat f(1, global_feature.size(), global_feature.values());
    const Mat cos = cosine_matrix(class_embeddings, f);
    std::vector<double> logits(class_embeddings.rows());
    for (std::size_t k = 0; k < logits.size(); ++k) logits[k] = cos(k, 0) / tau;
    const double lse = logsumexp(logits);
    for (double& x : logits) x = std::exp(x - lse);
    return Vec(std::move(logits));
}

std::size_t argmax(const Vec& v)
{
    if (v.empty()) throw Error("argmax: empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

}  // namespace uotalign
