#include "uotalign/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "uotalign/seeding.hpp"

namespace uotalign {

namespace {

// Independent streams fanned out from the master seed.
enum Stream : std::uint64_t { kSubsampleStream = 1, kInitStream = 2, kAugmentStream = 3, kShuffleStream = 4 };

std::vector<std::span<double>> param_views(PromptBank& bank, ParamGroup group)
{
    std::vector<std::span<double>> views;
    switch (group) {
    case kSharedGroup:
        for (auto& m : bank.shared_tokens) views.push_back(m.flat());
        break;
    case kAttentionGroup:
        views = {bank.attention.w_q.flat(), bank.attention.w_k.flat(), bank.attention.w_v.flat()};
        break;
    case kClassTokenGroup:
        for (auto& per_class : bank.class_tokens)
            for (auto& m : per_class) views.push_back(m.flat());
        break;
    default:
        break;
    }
    return views;
}

std::vector<std::span<double>> grad_views(PromptGrads& g, ParamGroup group)
{
    std::vector<std::span<double>> views;
    switch (group) {
    case kSharedGroup:
        for (auto& m : g.shared_tokens) views.push_back(m.flat());
        break;
    case kAttentionGroup:
        views = {g.w_q.flat(), g.w_k.flat(), g.w_v.flat()};
        break;
    case kClassTokenGroup:
        for (auto& per_class : g.class_tokens)
            for (auto& m : per_class) views.push_back(m.flat());
        break;
    default:
        break;
    }
    return views;
}

std::size_t total_size(const std::vector<std::span<double>>& views)
{
    std::size_t n = 0;
    for (const auto& v : views) n += v.size();
    return n;
}

std::vector<std::size_t> training_classes(const PromptBank& bank, const TrainConfig& cfg)
{
    std::vector<std::size_t> out;
    if (cfg.train_classes.empty()) {
        for (std::size_t i = 0; i < bank.num_classes(); ++i) out.push_back(i);
    } else {
        for (const auto& name : cfg.train_classes) out.push_back(bank.class_index(name));
    }
    return out;
}

std::size_t position_of(const std::vector<std::size_t>& classes, std::size_t bank_index)
{
    const auto it = std::find(classes.begin(), classes.end(), bank_index);
    if (it == classes.end()) throw Error("sample label outside the scored class set");
    return static_cast<std::size_t>(it - classes.begin());
}

}  // namespace

std::string variant_name(Variant v)
{
    switch (v) {
    case Variant::full: return "full";
    case Variant::no_csc: return "no_csc";
    case Variant::no_sc: return "no_sc";
    case Variant::no_gpt_init: return "no_gpt_init";
    case Variant::no_uot: return "no_uot";
    case Variant::no_self_attention: return "no_self_attention";
    }
    return "unknown";
}

Variant parse_variant(std::string_view name)
{
    for (Variant v : kAllVariants)
        if (variant_name(v) == name) return v;
    throw Error("unknown variant: " + std::string(name));
}

void TrainConfig::validate() const
{
    if (!(learning_rate >= 0.0)) throw Error("train config: learning_rate must be >= 0");
    if (batch_size < 1) throw Error("train config: batch_size must be >= 1");
    if (epochs < 0) throw Error("train config: epochs must be >= 0");
    if (shots < 0) throw Error("train config: shots must be >= 0");
    if (!(jitter_sigma >= 0.0)) throw Error("train config: jitter_sigma must be >= 0");
    if (!(drop_prob >= 0.0 && drop_prob < 1.0)) throw Error("train config: drop_prob must be in [0, 1)");
}

ClassifierConfig variant_classifier(const ClassifierConfig& base, Variant v)
{
    ClassifierConfig c = base;
    switch (v) {
    case Variant::no_csc: c.gamma_cs = 0.0; break;
    case Variant::no_sc: c.gamma_ds = 0.0; break;
    case Variant::no_uot: c.use_uot = false; break;
    default: break;
    }
    return c;
}

TrainState init_state(const DatasetManifest& manifest, const TrainConfig& cfg, const ClassifierConfig& ccfg)
{
    cfg.validate();
    const ClassifierConfig vc = variant_classifier(ccfg, cfg.variant);
    vc.validate();

    std::vector<DescriptionFile> files;
    for (std::size_t c = 0; c < manifest.classes.size(); ++c) {
        if (!manifest.descriptions.empty()) {
            files.push_back(parse_descriptions(manifest.resolve(manifest.descriptions[c]), manifest.classes[c]));
            if (files.back().class_name != manifest.classes[c])
                throw Error("description file for " + manifest.classes[c] + " names class " + files.back().class_name);
        } else {
            DescriptionFile f;
            f.class_name = manifest.classes[c];
            for (std::size_t k = 0; k < std::max<std::size_t>(cfg.model.class_prompts, 1); ++k)
                f.descriptions.push_back("a photo of a " + manifest.classes[c]);
            files.push_back(std::move(f));
        }
    }

    TrainState state;
    state.variant = cfg.variant;
    state.bank = build_prompt_bank(files, cfg.model, mix_seed(cfg.seed, kInitStream),
                                   cfg.variant == Variant::no_gpt_init);
    state.encoder = FrozenEncoder(cfg.model.token_dim, cfg.model.embed_dim, cfg.model.encoder_seed);

    const bool no_attention = cfg.variant == Variant::no_self_attention;
    state.bank.use_attention = !no_attention;
    state.bank.trainable.shared_tokens = vc.gamma_ds > 0.0;
    state.bank.trainable.attention = !no_attention && vc.gamma_cs > 0.0;
    state.bank.trainable.class_tokens = (cfg.model.train_class_tokens || no_attention) && vc.gamma_cs > 0.0;
    state.group_trainable = {state.bank.trainable.shared_tokens, state.bank.trainable.attention,
                             state.bank.trainable.class_tokens};

    for (std::size_t g = 0; g < kGroupCount; ++g) {
        const std::size_t n = total_size(param_views(state.bank, static_cast<ParamGroup>(g)));
        state.moments[g].first.assign(n, 0.0);
        state.moments[g].second.assign(n, 0.0);
    }
    return state;
}

LossAndGrad loss_and_gradient(const std::vector<FeatureSet>& batch, const std::vector<std::size_t>& labels,
                              const std::vector<std::size_t>& classes, const PromptBank& bank,
                              const FrozenEncoder& encoder, const ClassifierConfig& ccfg)
{
    ccfg.validate();
    if (batch.empty()) throw Error("empty batch");
    if (labels.size() != batch.size()) throw Error("labels do not match batch");
    if (classes.empty()) throw Error("no classes to score");
    const std::size_t batch_n = batch.size(), class_n = classes.size();

    std::vector<ClassEmbeddings> emb;
    for (std::size_t c : classes) emb.push_back(build_class_embeddings(bank, c, encoder));
    std::vector<FeatureSet> active;
    for (const auto& fs : batch) active.push_back(active_tokens(fs));

    // One problem per (sample, class, path); batched by shape.
    struct Job {
        std::size_t sample, cls;
        bool specific;
        Mat cost;
    };
    std::vector<Job> jobs;
    for (std::size_t b = 0; b < batch_n; ++b)
        for (std::size_t k = 0; k < class_n; ++k) {
            if (ccfg.gamma_cs > 0.0) jobs.push_back({b, k, true, cost_matrix(active[b].features, emb[k].specific)});
            if (ccfg.gamma_ds > 0.0) jobs.push_back({b, k, false, cost_matrix(active[b].features, emb[k].shared)});
        }
    std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> by_shape;
    for (std::size_t j = 0; j < jobs.size(); ++j) by_shape[{jobs[j].cost.rows(), jobs[j].cost.cols()}].push_back(j);

    std::vector<TransportPlan> plans(jobs.size());
    for (const auto& [shape, members] : by_shape) {
        std::vector<TransportProblem> problems;
        for (std::size_t j : members)
            problems.push_back(alignment_problem(jobs[j].cost, active[jobs[j].sample].weights, ccfg));
        auto results = solve_uot_batch(problems, ccfg.solver);
        for (std::size_t r = 0; r < members.size(); ++r) {
            const Job& job = jobs[members[r]];
            auto context = [&] {
                return " (sample " + batch[job.sample].sample_id + ", class " + bank.class_names[classes[job.cls]] +
                       (job.specific ? ", class-specific" : ", domain-shared") + ")";
            };
            if (!results[r].ok()) throw Error("solver failure: " + results[r].error + context());
            if (!results[r].plan->converged)
                throw Error("solver failure: gradient at non-optimum after " +
                            std::to_string(results[r].plan->iterations) + " iterations" + context());
            plans[members[r]] = std::move(*results[r].plan);
        }
    }

    Mat distances(batch_n, class_n);
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        const double gamma = jobs[j].specific ? ccfg.gamma_cs : ccfg.gamma_ds;
        distances(jobs[j].sample, jobs[j].cls) += gamma * plan_distance(plans[j], jobs[j].cost, ccfg.distance);
    }

    LossAndGrad out;
    out.grads = PromptGrads::zeros_like(bank);
    out.probs = Mat(batch_n, class_n);
    Mat d_dist(batch_n, class_n);
    for (std::size_t b = 0; b < batch_n; ++b) {
        const Vec p = likelihood(Vec(std::vector<double>(distances.row(b).begin(), distances.row(b).end())), ccfg.tau);
        std::copy(p.begin(), p.end(), out.probs.row(b).begin());
        const std::size_t y = labels[b];
        if (y >= class_n) throw Error("label out of range");
        out.loss -= std::log(std::max(p[y], 1e-300));
        if (argmax(p) == y) ++out.correct;
        for (std::size_t k = 0; k < class_n; ++k)
            d_dist(b, k) = -(p[k] - (k == y ? 1.0 : 0.0)) / (static_cast<double>(batch_n) * ccfg.tau);
    }
    out.loss /= static_cast<double>(batch_n);

    std::vector<Mat> d_shared(class_n), d_specific(class_n);
    for (std::size_t k = 0; k < class_n; ++k) {
        if (ccfg.gamma_ds > 0.0) d_shared[k] = Mat(emb[k].shared.rows(), emb[k].shared.cols());
        if (ccfg.gamma_cs > 0.0) d_specific[k] = Mat(emb[k].specific.rows(), emb[k].specific.cols());
    }
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        const Job& job = jobs[j];
        const double gamma = job.specific ? ccfg.gamma_cs : ccfg.gamma_ds;
        Mat d_cost = gradient_wrt_cost(plans[j]);
        const double scale = gamma * d_dist(job.sample, job.cls);
        for (double& x : d_cost.flat()) x *= scale;
        const Mat& prompts = job.specific ? emb[job.cls].specific : emb[job.cls].shared;
        const Mat d_prompts = cost_matrix_backward(active[job.sample].features, prompts, d_cost);
        Mat& dst = job.specific ? d_specific[job.cls] : d_shared[job.cls];
        for (std::size_t q = 0; q < dst.size(); ++q) dst.flat()[q] += d_prompts.flat()[q];
    }
    for (std::size_t k = 0; k < class_n; ++k)
        backprop_class_embeddings(bank, classes[k], encoder, d_shared[k], d_specific[k], out.grads);
    return out;
}

StepResult train_step(const std::vector<FeatureSet>& batch, TrainState& state, const TrainConfig& cfg,
                      const ClassifierConfig& ccfg, std::uint64_t augment_seed)
{
    if (batch.empty()) throw Error("empty batch");
    const ClassifierConfig vc = variant_classifier(ccfg, state.variant);
    const auto classes = training_classes(state.bank, cfg);

    std::vector<FeatureSet> views;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (!batch[i].label) throw Error("unlabeled sample " + batch[i].sample_id);
        labels.push_back(position_of(classes, state.bank.class_index(*batch[i].label)));
        views.push_back(augment(batch[i], cfg.jitter_sigma, cfg.drop_prob, mix_seed(augment_seed, i)));
    }

    LossAndGrad lg = loss_and_gradient(views, labels, classes, state.bank, state.encoder, vc);
    if (!std::isfinite(lg.loss))
        throw Error("divergence at step " + std::to_string(state.step) + ": non-finite loss; parameters left at the pre-step snapshot");

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(cfg.adam_beta1, t);
    const double correction2 = 1.0 - std::pow(cfg.adam_beta2, t);
    for (std::size_t g = 0; g < kGroupCount; ++g) {
        if (!state.group_trainable[g]) continue;
        auto params = param_views(state.bank, static_cast<ParamGroup>(g));
        auto grads = grad_views(lg.grads, static_cast<ParamGroup>(g));
        auto& mom = state.moments[g];
        std::size_t flat = 0;
        for (std::size_t v = 0; v < params.size(); ++v)
            for (std::size_t i = 0; i < params[v].size(); ++i, ++flat) {
                const double grad = grads[v][i];
                mom.first[flat] = cfg.adam_beta1 * mom.first[flat] + (1.0 - cfg.adam_beta1) * grad;
                mom.second[flat] = cfg.adam_beta2 * mom.second[flat] + (1.0 - cfg.adam_beta2) * grad * grad;
                const double m_hat = mom.first[flat] / correction1;
                const double v_hat = mom.second[flat] / correction2;
                params[v][i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_epsilon);
            }
    }
    return {lg.loss, lg.correct, batch.size()};
}

std::vector<const SampleEntry*> few_shot_subset(const DatasetManifest& manifest, const TrainConfig& cfg)
{
    const int shots = cfg.shots > 0 ? cfg.shots : manifest.shots;
    if (shots < 1) throw Error("few-shot subset: shots must be >= 1");
    const auto train = manifest.split("train");
    std::vector<std::string> classes = cfg.train_classes.empty() ? manifest.classes : cfg.train_classes;
    std::mt19937_64 rng(mix_seed(cfg.seed, kSubsampleStream));
    std::vector<const SampleEntry*> out;
    for (const auto& name : classes) {
        if (!manifest.has_class(name)) throw Error("unknown class: " + name);
        std::vector<const SampleEntry*> pool;
        for (const auto* s : train)
            if (s->label == name) pool.push_back(s);
        if (pool.size() < static_cast<std::size_t>(shots))
            throw Error("class " + name + " has " + std::to_string(pool.size()) + " training samples, " +
                        std::to_string(shots) + " shots requested");
        std::shuffle(pool.begin(), pool.end(), rng);
        out.insert(out.end(), pool.begin(), pool.begin() + shots);
    }
    return out;
}

TrainState train(const DatasetManifest& manifest, const TrainConfig& cfg, const ClassifierConfig& ccfg)
{
    TrainState state = init_state(manifest, cfg, ccfg);
    if (cfg.epochs == 0) return state;

    std::vector<FeatureSet> data;
    for (const auto* entry : few_shot_subset(manifest, cfg)) data.push_back(load_sample(manifest, *entry));
    for (const auto& fs : data)
        if (fs.features.cols() != state.encoder.embed_dim())
            throw Error("feature dimension " + std::to_string(fs.features.cols()) + " does not match embed_dim " +
                        std::to_string(state.encoder.embed_dim()));

    std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, kShuffleStream));
    const std::uint64_t augment_root = mix_seed(cfg.seed, kAugmentStream);
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        std::size_t correct = 0, seen = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::vector<FeatureSet> batch;
            for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i)
                batch.push_back(data[order[i]]);
            const auto r = train_step(batch, state, cfg, ccfg, mix_seed(augment_root, static_cast<std::uint64_t>(state.step)));
            loss_sum += r.loss * static_cast<double>(r.count);
            correct += r.correct;
            seen += r.count;
        }
        ++state.epoch;
        state.history.push_back({state.epoch, loss_sum / static_cast<double>(seen),
                                 static_cast<double>(correct) / static_cast<double>(seen)});
    }
    return state;
}

Metrics evaluate_samples(const DatasetManifest& manifest, const std::vector<const SampleEntry*>& samples,
                         const TrainState& state, const ClassifierConfig& ccfg, const std::vector<std::string>& classes)
{
    const ClassifierConfig vc = variant_classifier(ccfg, state.variant);
    std::vector<std::size_t> candidates;
    if (classes.empty()) {
        for (std::size_t i = 0; i < state.bank.num_classes(); ++i) candidates.push_back(i);
    } else {
        for (const auto& name : classes) candidates.push_back(state.bank.class_index(name));
    }

    std::vector<const SampleEntry*> selected;
    for (const auto* s : samples) {
        const std::size_t idx = state.bank.class_index(s->label);
        if (std::find(candidates.begin(), candidates.end(), idx) != candidates.end()) selected.push_back(s);
    }
    if (selected.empty()) throw Error("empty split");

    std::vector<ClassEmbeddings> emb;
    for (std::size_t c : candidates) emb.push_back(build_class_embeddings(state.bank, c, state.encoder));

    Metrics m;
    std::map<std::string, std::pair<std::size_t, std::size_t>> tally;
    std::size_t correct = 0;
    double loss = 0.0;
    for (const auto* s : selected) {
        const FeatureSet fs = load_sample(manifest, *s);
        std::vector<double> d(candidates.size());
        for (std::size_t k = 0; k < candidates.size(); ++k) {
            try {
                d[k] = score(fs, emb[k], vc).d_total;
            } catch (const Error& e) {
                throw Error(std::string(e.what()) + " (sample " + s->id + ", class " +
                            state.bank.class_names[candidates[k]] + ")");
            }
        }
        const Vec p = likelihood(Vec(d), vc.tau);
        const std::size_t truth = position_of(candidates, state.bank.class_index(s->label));
        loss -= std::log(std::max(p[truth], 1e-300));
        auto& t = tally[s->label];
        ++t.second;
        if (argmax(p) == truth) {
            ++correct;
            ++t.first;
        }
    }
    m.count = selected.size();
    m.accuracy = static_cast<double>(correct) / static_cast<double>(m.count);
    m.mean_loss = loss / static_cast<double>(m.count);
    for (const auto& [name, t] : tally) m.per_class[name] = static_cast<double>(t.first) / static_cast<double>(t.second);
    return m;
}

Metrics evaluate(const DatasetManifest& manifest, std::string_view split, const TrainState& state,
                 const ClassifierConfig& ccfg, const std::vector<std::string>& classes)
{
    const auto samples = manifest.split(split);
    if (samples.empty()) throw Error("empty split: " + std::string(split));
    return evaluate_samples(manifest, samples, state, ccfg, classes);
}

std::vector<AblationRow> run_ablation(const DatasetManifest& manifest, const TrainConfig& cfg,
                                      const ClassifierConfig& ccfg)
{
    std::vector<AblationRow> rows;
    for (Variant v : kAllVariants) {
        AblationRow row;
        row.variant = v;
        try {
            TrainConfig vcfg = cfg;
            vcfg.variant = v;
            const TrainState state = train(manifest, vcfg, ccfg);
            row.trainable_scalars = state.bank.trainable_scalars();
            row.final_loss = state.history.empty() ? 0.0 : state.history.back().loss;
            row.train_accuracy = evaluate_samples(manifest, few_shot_subset(manifest, vcfg), state, ccfg,
                                                  vcfg.train_classes).accuracy;
            row.test_accuracy = evaluate(manifest, "test", state, ccfg, vcfg.train_classes).accuracy;
            row.ok = true;
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace uotalign
