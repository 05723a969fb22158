#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "json.hpp"
#include "uotalign/checkpoint.hpp"
#include "uotalign/classifier.hpp"
#include "uotalign/features.hpp"
#include "uotalign/oracle.hpp"
#include "uotalign/outlier_demo.hpp"
#include "uotalign/trainer.hpp"

using namespace uotalign;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

fs::path scratch(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / ("uotalign_acceptance_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

Mat random_unit_rows(std::mt19937_64& rng, std::size_t r, std::size_t c)
{
    std::normal_distribution<double> normal;
    Mat m(r, c);
    for (std::size_t i = 0; i < r; ++i) {
        for (double& x : m.row(i)) x = normal(rng);
        const double n = norm2(m.row(i));
        for (double& x : m.row(i)) x /= n;
    }
    return m;
}

Vec random_mass(std::mt19937_64& rng, std::size_t n, double total)
{
    std::uniform_real_distribution<double> u(0.2, 1.0);
    Vec v(n);
    for (double& x : v) x = u(rng);
    const double s = v.sum();
    for (double& x : v) x *= total / s;
    return v;
}

TransportProblem random_problem(std::mt19937_64& rng, std::size_t r, std::size_t c, double lambda, double rho1,
                                double rho2, bool equal_mass)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    TransportProblem p;
    p.cost = Mat(r, c);
    for (double& x : p.cost.flat()) x = u(rng);
    p.source = random_mass(rng, r, 1.0);
    p.target = random_mass(rng, c, equal_mass ? 1.0 : 0.8);
    p.lambda = lambda;
    p.rho1 = rho1;
    p.rho2 = rho2;
    return p;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

int report(int index, const std::string& name, const std::function<Outcome()>& check)
{
    Outcome o;
    try {
        o = check();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", index, name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    return o.pass ? 0 : 1;
}

std::string fmt(const char* f, double a)
{
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::string fmt2(const char* f, double a, double b)
{
    char buf[160];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

Outcome oracle_equivalence()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    const std::pair<std::size_t, std::size_t> shapes[] = {{2, 2}, {2, 3}, {3, 2}};
    const double lambdas[] = {0.05, 0.1};
    const double rhos[] = {0.5, 1.0, kInfRho};
    double worst = 0.0;
    int count = 0;
    for (int k = 0; k < 30; ++k) {
        const auto [r, c] = shapes[k % 3];
        const double lambda = lambdas[(k / 3) % 2];
        const double rho1 = rhos[(k / 6) % 3];
        const double rho2 = rhos[(k / 2) % 3];
        const bool balanced = std::isinf(rho1) && std::isinf(rho2);
        const auto p = random_problem(rng, r, c, lambda, rho1, rho2, balanced);
        const auto plan = solve_uot(p);
        if (!plan.converged) return {false, "solver did not converge on instance " + std::to_string(k)};
        const auto grid = oracle::grid_minimize(p, {0.0, 9, 10});
        worst = std::max(worst, std::abs(plan.primal_value - grid.value));
        ++count;
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-3 && secs < 60.0 && count == 30,
            fmt2("max |solver - oracle| = %.3g over 30 instances, %.1f s", worst, secs)};
}

Outcome balanced_feasibility()
{
    std::mt19937_64 rng(202);
    std::uniform_int_distribution<std::size_t> size(1, 10);
    std::uniform_real_distribution<double> lam(0.05, 0.5);
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
        const auto p = random_problem(rng, size(rng), size(rng), lam(rng), kInfRho, kInfRho, true);
        const auto plan = solve_uot(p);
        if (!plan.converged) return {false, "instance " + std::to_string(k) + " did not converge"};
        const Vec rs = plan.coupling.row_sums(), cs = plan.coupling.col_sums();
        double e1 = 0.0, e2 = 0.0;
        for (std::size_t i = 0; i < rs.size(); ++i) e1 += std::abs(rs[i] - p.source[i]);
        for (std::size_t j = 0; j < cs.size(); ++j) e2 += std::abs(cs[j] - p.target[j]);
        worst = std::max({worst, e1, e2});
    }
    return {worst < 1e-6, fmt("max marginal L1 error = %.3g over 50 instances", worst)};
}

Outcome uot_limit()
{
    std::mt19937_64 rng(303);
    double worst = 0.0;
    int relaxed_converged = 0;
    for (int k = 0; k < 10; ++k) {
        auto p = random_problem(rng, 5, 7, 0.1, 1e6, 1e6, true);
        const auto relaxed = solve_uot(p);
        p.rho1 = p.rho2 = kInfRho;
        const auto hard = solve_uot(p);
        if (!hard.converged) return {false, "balanced plan did not converge"};
        relaxed_converged += relaxed.converged;
        for (std::size_t i = 0; i < hard.coupling.size(); ++i)
            worst = std::max(worst, std::abs(relaxed.coupling.flat()[i] - hard.coupling.flat()[i]));
    }
    return {worst < 1e-4, fmt2("max |W(1e6) - W(balanced)| = %.3g over 10 instances; rho=1e6 dual stopping rule met "
                               "in %.0f of 10 at the default iteration cap",
                               worst, relaxed_converged)};
}

Outcome outlier_reproduction()
{
    const auto t0 = Clock::now();
    const auto r = compare_outliers(OutlierSpec{}, SolverConfig{.max_iterations = 100000});
    const double secs = seconds_since(t0);
    const bool ok = std::abs(r.ot_outlier_mass - 0.8) < 1e-6 && r.uot_outlier_mass < 0.05 && secs < 5.0;
    char buf[200];
    std::snprintf(buf, sizeof buf, "OT outlier mass %.6f, UOT outlier mass %.3g, %.2f s", r.ot_outlier_mass,
                  r.uot_outlier_mass, secs);
    return {ok, buf};
}

double rel_error(const std::vector<double>& fd, const std::vector<double>& an)
{
    double err = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
        err += (fd[i] - an[i]) * (fd[i] - an[i]);
        norm += fd[i] * fd[i];
    }
    return norm > 0.0 ? std::sqrt(err / norm) : (err > 0.0 ? 1.0 : 0.0);
}

// Central differences over every entry of m, evaluating f after each nudge.
std::vector<double> fd_over(Mat& m, const std::function<double()>& f, double h = 1e-5)
{
    std::vector<double> out;
    for (double& x : m.flat()) {
        const double orig = x;
        x = orig + h;
        const double up = f();
        x = orig - h;
        const double down = f();
        x = orig;
        out.push_back((up - down) / (2 * h));
    }
    return out;
}

std::vector<double> as_vec(const Mat& m)
{
    return {m.flat().begin(), m.flat().end()};
}

Outcome gradients()
{
    std::mt19937_64 rng(505);
    std::normal_distribution<double> normal;

    ModelConfig mc;
    mc.token_dim = 8;
    mc.embed_dim = 8;
    mc.attention_dim = 8;
    mc.prompt_length = 4;
    mc.shared_prompts = 2;
    mc.class_prompts = 2;
    const std::vector<DescriptionFile> d{{"cat", {"a small furry cat", "whiskers and a tail"}, {}},
                                         {"dog", {"a loyal barking dog", "floppy ears and paws"}, {}}};
    PromptBank bank = build_prompt_bank(d, mc, 3);
    const FrozenEncoder encoder(8, 8, mc.encoder_seed);

    // Attention backward against a random linear readout.
    Mat tokens = bank.class_tokens[0][0];
    AttentionParams attn = bank.attention;
    Mat up(tokens.rows(), attn.w_v.cols());
    for (double& x : up.flat()) x = normal(rng);
    const auto attn_loss = [&] { return frobenius_dot(attention_forward(tokens, attn), up); };
    const AttentionGrads ag = attention_backward(tokens, attn, up);
    double e_attn = rel_error(fd_over(tokens, attn_loss), as_vec(ag.tokens));
    e_attn = std::max(e_attn, rel_error(fd_over(attn.w_q, attn_loss), as_vec(ag.w_q)));
    e_attn = std::max(e_attn, rel_error(fd_over(attn.w_k, attn_loss), as_vec(ag.w_k)));
    e_attn = std::max(e_attn, rel_error(fd_over(attn.w_v, attn_loss), as_vec(ag.w_v)));

    // Encoder path.
    Vec readout(8);
    for (double& x : readout) x = normal(rng);
    Mat enc_tokens = bank.class_tokens[1][1];
    const auto enc_loss = [&] { return dot(encoder.encode(enc_tokens).span(), readout.span()); };
    const double e_enc = rel_error(fd_over(enc_tokens, enc_loss), as_vec(encoder.backward(enc_tokens, readout.span())));

    // Cost path.
    const Mat feats = random_unit_rows(rng, 4, 8);
    Mat g = random_unit_rows(rng, 2, 8);
    Mat cup(2, 4);
    for (double& x : cup.flat()) x = normal(rng);
    const Mat cost_grad = cost_matrix_backward(feats, g, cup);
    const double e_cost = rel_error(fd_over(g, [&] { return frobenius_dot(cost_matrix(feats, g), cup); }),
                                    as_vec(cost_grad));

    // Full loss, re-solving every transport problem inside each perturbation.
    std::vector<FeatureSet> batch;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < 3; ++i) {
        batch.push_back(make_feature_set(random_unit_rows(rng, 4, 8), "s" + std::to_string(i)));
        labels.push_back(i % 2);
    }
    const std::vector<std::size_t> classes{0, 1};
    const ClassifierConfig ccfg;
    const auto full = [&] { return loss_and_gradient(batch, labels, classes, bank, encoder, ccfg).loss; };
    const auto lg = loss_and_gradient(batch, labels, classes, bank, encoder, ccfg);
    std::vector<double> fd, an;
    for (std::size_t p = 0; p < bank.shared_tokens.size(); ++p) {
        auto v = fd_over(bank.shared_tokens[p], full);
        fd.insert(fd.end(), v.begin(), v.end());
        auto a = as_vec(lg.grads.shared_tokens[p]);
        an.insert(an.end(), a.begin(), a.end());
    }
    for (auto [w, dw] : {std::pair{&bank.attention.w_q, &lg.grads.w_q}, std::pair{&bank.attention.w_k, &lg.grads.w_k},
                         std::pair{&bank.attention.w_v, &lg.grads.w_v}}) {
        auto v = fd_over(*w, full);
        fd.insert(fd.end(), v.begin(), v.end());
        auto a = as_vec(*dw);
        an.insert(an.end(), a.begin(), a.end());
    }
    const double e_full = rel_error(fd, an);

    char buf[200];
    std::snprintf(buf, sizeof buf, "relative errors: attention %.2g, encoder %.2g, cost %.2g, full loss %.2g", e_attn,
                  e_enc, e_cost, e_full);
    return {std::max({e_attn, e_enc, e_cost, e_full}) < 2e-3, buf};
}

DatasetManifest few_shot_dataset(const fs::path& dir)
{
    SynthOptions opts;
    opts.num_classes = 3;
    opts.separation = 10.0;
    opts.dim = 32;
    opts.tokens = 8;
    opts.shots = 4;
    return synth_dataset(opts, dir);
}

Outcome few_shot()
{
    const fs::path dir = scratch("few_shot");
    const auto t0 = Clock::now();
    const DatasetManifest m = few_shot_dataset(dir / "data");
    const TrainConfig t;
    const ClassifierConfig c;
    const TrainState a = train(m, t, c);
    const double secs = seconds_since(t0);
    const double train_acc = evaluate_samples(m, few_shot_subset(m, t), a, c).accuracy;
    const double test_acc = evaluate(m, "test", a, c).accuracy;
    const TrainState b = train(m, t, c);
    const bool same = encode_checkpoint(a, RunConfig{t, c}) == encode_checkpoint(b, RunConfig{t, c});
    char buf[200];
    std::snprintf(buf, sizeof buf, "train %.3f, held-out %.3f, repeat identical %s, %.1f s", train_acc, test_acc,
                  same ? "yes" : "no", secs);
    return {train_acc >= 0.95 && test_acc >= 0.9 && same && secs < 120.0, buf};
}

int run_cli(const std::string& args)
{
    const std::string cmd = std::string("\"") + UOTALIGN_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome ablation()
{
    const fs::path dir = scratch("ablation");
    if (run_cli("--out " + (dir / "data").string() + " synth --tokens 8") != 0) return {false, "synth failed"};
    const int code =
        run_cli("--out " + (dir / "abl").string() + " ablate --manifest " + (dir / "data" / "manifest.json").string());
    if (code != 0) return {false, "ablate exited with " + std::to_string(code)};
    std::ifstream in(dir / "abl" / "ablation.json");
    const auto table = nlohmann::json::parse(in);
    std::string names;
    bool all_ok = table.size() == kAllVariants.size();
    for (const auto& row : table) {
        all_ok = all_ok && row.at("ok").get<bool>();
        names += (names.empty() ? "" : ",") + row.at("variant").get<std::string>();
    }
    return {all_ok && fs::exists(dir / "abl" / "ablation.csv"),
            std::to_string(table.size()) + " variants completed (" + names + ")"};
}

Outcome probability()
{
    std::mt19937_64 rng(808);
    std::uniform_real_distribution<double> u(0.0, 2.0), shift(-5.0, 5.0);
    double worst = 0.0;
    int argmax_changes = 0;
    for (int k = 0; k < 1000; ++k) {
        Vec s(2 + k % 9);
        for (double& x : s) x = u(rng);
        const Vec p = likelihood(s, 0.01);
        worst = std::max(worst, std::abs(p.sum() - 1.0));
        const double delta = shift(rng);
        Vec t = s;
        for (double& x : t) x += delta;
        argmax_changes += argmax(likelihood(t, 0.01)) != argmax(p);
    }
    return {worst < 1e-12 && argmax_changes == 0,
            fmt2("max |sum - 1| = %.3g, argmax changes under shift = %.0f", worst, argmax_changes)};
}

Outcome determinism()
{
    const fs::path dir = scratch("determinism");
    SynthOptions opts;
    opts.tokens = 8;
    opts.per_class = 10;
    const DatasetManifest m = synth_dataset(opts, dir / "data");
    RunConfig cfg;
    cfg.train.epochs = 5;
    save_checkpoint(dir / "a.uck", train(m, cfg.train, cfg.classifier), cfg);
    save_checkpoint(dir / "b.uck", train(m, cfg.train, cfg.classifier), cfg);
    const auto read = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    };
    const bool ck_same = read(dir / "a.uck") == read(dir / "b.uck");

    std::mt19937_64 rng(909);
    std::normal_distribution<float> normal;
    Mat emb(49, 32);
    for (double& x : emb.flat()) x = static_cast<double>(normal(rng));
    write_embedding_file(dir / "x.emb", emb);
    const Mat back = read_embedding_file(dir / "x.emb");
    write_embedding_file(dir / "y.emb", back);
    const bool emb_same = back == emb && read(dir / "x.emb") == read(dir / "y.emb");
    return {ck_same && emb_same, std::string("checkpoints identical: ") + (ck_same ? "yes" : "no") +
                                     ", EMB1 lossless: " + (emb_same ? "yes" : "no")};
}

}  // namespace

int main()
{
    int failures = 0;
    failures += report(1, "oracle equivalence", oracle_equivalence);
    failures += report(2, "balanced feasibility", balanced_feasibility);
    failures += report(3, "UOT to OT limit", uot_limit);
    failures += report(4, "outlier reproduction", outlier_reproduction);
    failures += report(5, "gradient correctness", gradients);
    failures += report(6, "few-shot sanity", few_shot);
    failures += report(7, "ablation harness", ablation);
    failures += report(8, "probability invariants", probability);
    failures += report(9, "determinism and formats", determinism);
    return failures == 0 ? 0 : 1;
}
