#pragma once

#include <string>
#include <vector>

#include "uotalign/features.hpp"
#include "uotalign/numerics.hpp"
#include "uotalign/prompt_model.hpp"
#include "uotalign/transport.hpp"

namespace uotalign {

// What a transport solve contributes to the class distance.
enum class DistanceKind {
    // Optimal value of the regularized objective; its cost gradient is W*.
    regularized_value,
    // <W*, C> alone; the W* gradient is then only the envelope approximation.
    transported_cost,
};

struct ClassifierConfig {
    double tau = 0.01;
    double gamma_cs = 0.5;
    double gamma_ds = 0.5;
    double lambda = 0.01;
    double rho1 = kInfRho;
    double rho2 = 0.04;
    bool use_uot = true;
    DistanceKind distance = DistanceKind::regularized_value;
    SolverConfig solver{.max_iterations = 100000};

    // Throws unless tau > 0, gammas >= 0 with at least one positive, lambda > 0.
    void validate() const;
    double effective_rho1() const { return use_uot ? rho1 : kInfRho; }
    double effective_rho2() const { return use_uot ? rho2 : kInfRho; }
};

struct AlignmentScore {
    double d_cs = 0.0;
    double d_ds = 0.0;
    double d_total = 0.0;
    // Empty plans (0x0 coupling) for a path whose weight is zero.
    TransportPlan plan_cs;
    TransportPlan plan_ds;
};

// C = 1 - cos(G, F), rows = prompts, columns = visual tokens.
Mat cost_matrix(const Mat& features, const Mat& prompts);

// d(loss)/d(prompts) from d(loss)/d(C) for C = cost_matrix(features, prompts).
Mat cost_matrix_backward(const Mat& features, const Mat& prompts, const Mat& d_cost);

// Visual tokens with nonzero weight; the transport marginals must be positive.
FeatureSet active_tokens(const FeatureSet& fs);

// Distance contributed by one plan under the configured kind.
double plan_distance(const TransportPlan& plan, const Mat& cost, DistanceKind kind);

TransportProblem alignment_problem(const Mat& cost, const Vec& visual_weights, const ClassifierConfig& cfg);

AlignmentScore score(const FeatureSet& fs, const ClassEmbeddings& embeddings, const ClassifierConfig& cfg);
AlignmentScore score(const FeatureSet& fs, std::string_view class_name, const PromptBank& bank,
                     const FrozenEncoder& encoder, const ClassifierConfig& cfg);

// softmax((1 - d) / tau).
Vec likelihood(const Vec& distances, double tau);

// -(1/B) sum_b sum_k y_bk log p_bk; a zero true-class probability is clamped
// at 1e-300 and counted in *clamped.
double ce_loss(const Mat& probs, const Mat& labels, int* clamped = nullptr);

// softmax(cos(t_k, f) / tau).
Vec zero_shot_likelihood(const Vec& global_feature, const Mat& class_embeddings, double tau);

std::size_t argmax(const Vec& v);

}  // namespace uotalign
