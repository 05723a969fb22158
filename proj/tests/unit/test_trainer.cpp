#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "uotalign/checkpoint.hpp"
#include "uotalign/config.hpp"
#include "uotalign/trainer.hpp"

using namespace uotalign;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / ("uotalign_trainer_" + name);
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

struct Small {
    PromptBank bank;
    FrozenEncoder encoder;
    std::vector<FeatureSet> batch;
    std::vector<std::size_t> labels;
    std::vector<std::size_t> classes{0, 1};
};

Small small_instance()
{
    ModelConfig mc;
    mc.token_dim = 8;
    mc.embed_dim = 8;
    mc.attention_dim = 8;
    mc.prompt_length = 4;
    mc.shared_prompts = 2;
    mc.class_prompts = 2;
    std::vector<DescriptionFile> d{{"cat", {"a small furry cat", "whiskers and a tail"}, {}},
                                   {"dog", {"a loyal barking dog", "floppy ears and paws"}, {}}};
    Small s;
    s.bank = build_prompt_bank(d, mc, 3);
    s.encoder = FrozenEncoder(8, 8, mc.encoder_seed);
    std::mt19937_64 rng(9);
    for (std::size_t i = 0; i < 3; ++i) {
        s.batch.push_back(make_feature_set(random_unit_rows(rng, 4, 8), "s" + std::to_string(i)));
        s.labels.push_back(i % 2);
    }
    return s;
}

// Pointers to every parameter scalar the trainer updates, paired with the
// matching gradient entry.
std::vector<std::pair<double*, double*>> params_and_grads(PromptBank& bank, PromptGrads& g)
{
    std::vector<std::pair<double*, double*>> out;
    for (std::size_t p = 0; p < bank.shared_tokens.size(); ++p)
        for (std::size_t k = 0; k < bank.shared_tokens[p].size(); ++k)
            out.emplace_back(&bank.shared_tokens[p].flat()[k], &g.shared_tokens[p].flat()[k]);
    for (auto [w, dw] : {std::pair{&bank.attention.w_q, &g.w_q}, std::pair{&bank.attention.w_k, &g.w_k},
                         std::pair{&bank.attention.w_v, &g.w_v}})
        for (std::size_t k = 0; k < w->size(); ++k) out.emplace_back(&w->flat()[k], &dw->flat()[k]);
    return out;
}

struct SynthFixture {
    fs::path dir;
    DatasetManifest manifest;
};

SynthFixture synth(const std::string& name, std::size_t per_class = 20)
{
    SynthFixture f;
    f.dir = scratch(name);
    SynthOptions opts;
    opts.per_class = per_class;
    opts.tokens = 8;
    f.manifest = synth_dataset(opts, f.dir / "data");
    return f;
}

TrainConfig quick_config(int epochs = 10)
{
    TrainConfig t;
    t.epochs = epochs;
    t.learning_rate = 1e-2;
    t.batch_size = 4;
    return t;
}

std::vector<double> flatten_bank(const PromptBank& b)
{
    std::vector<double> out;
    for (const auto& m : b.shared_tokens) out.insert(out.end(), m.flat().begin(), m.flat().end());
    for (const auto* m : {&b.attention.w_q, &b.attention.w_k, &b.attention.w_v})
        out.insert(out.end(), m->flat().begin(), m->flat().end());
    for (const auto& cls : b.class_tokens)
        for (const auto& m : cls) out.insert(out.end(), m.flat().begin(), m.flat().end());
    return out;
}

}  // namespace

TEST_CASE("variant names")
{
    for (Variant v : kAllVariants) CHECK(parse_variant(variant_name(v)) == v);
    CHECK_THROWS_WITH(parse_variant("nope"), doctest::Contains("unknown variant"));
    const ClassifierConfig base;
    CHECK(variant_classifier(base, Variant::no_csc).gamma_cs == 0.0);
    CHECK(variant_classifier(base, Variant::no_sc).gamma_ds == 0.0);
    CHECK_FALSE(variant_classifier(base, Variant::no_uot).use_uot);
    CHECK(variant_classifier(base, Variant::full).gamma_cs == base.gamma_cs);
}

TEST_CASE("full loss gradient matches finite differences")
{
    Small s = small_instance();
    ClassifierConfig ccfg;
    const auto lg = loss_and_gradient(s.batch, s.labels, s.classes, s.bank, s.encoder, ccfg);
    PromptGrads g = lg.grads;
    auto pairs = params_and_grads(s.bank, g);
    REQUIRE(!pairs.empty());

    double err = 0.0, norm = 0.0;
    const double h = 1e-5;
    for (std::size_t k = 0; k < pairs.size(); k += 7) {
        double* x = pairs[k].first;
        const double orig = *x;
        *x = orig + h;
        const double up = loss_and_gradient(s.batch, s.labels, s.classes, s.bank, s.encoder, ccfg).loss;
        *x = orig - h;
        const double down = loss_and_gradient(s.batch, s.labels, s.classes, s.bank, s.encoder, ccfg).loss;
        *x = orig;
        const double fd = (up - down) / (2 * h);
        err += (fd - *pairs[k].second) * (fd - *pairs[k].second);
        norm += fd * fd;
    }
    REQUIRE(norm > 0.0);
    CHECK(std::sqrt(err / norm) < 2e-3);
}

TEST_CASE("zero learning rate leaves parameters unchanged")
{
    auto f = synth("zero_lr");
    TrainConfig t = quick_config(2);
    t.learning_rate = 0.0;
    const ClassifierConfig c;
    const TrainState init = init_state(f.manifest, t, c);
    const TrainState out = train(f.manifest, t, c);
    CHECK(flatten_bank(out.bank) == flatten_bank(init.bank));
    CHECK(out.step > 0);
}

TEST_CASE("single-sample loss decreases")
{
    auto f = synth("single");
    TrainConfig t = quick_config();
    t.jitter_sigma = 0.0;
    t.drop_prob = 0.0;
    const ClassifierConfig c;
    TrainState st = init_state(f.manifest, t, c);
    const auto* entry = f.manifest.split("train").front();
    const std::vector<FeatureSet> batch{load_sample(f.manifest, *entry)};
    std::vector<double> losses;
    for (int i = 0; i < 50; ++i) losses.push_back(train_step(batch, st, t, c, static_cast<std::uint64_t>(i)).loss);
    int decreases = 0;
    for (int i = 1; i <= 10; ++i) decreases += losses[i] < losses[i - 1];
    CHECK(decreases >= 8);
    CHECK(losses.back() < losses.front());
}

TEST_CASE("variants freeze the right groups")
{
    auto f = synth("frozen");
    const ClassifierConfig c;
    TrainConfig t = quick_config(2);

    const TrainState init = init_state(f.manifest, t, c);
    const TrainState full = train(f.manifest, t, c);
    CHECK(full.encoder.projection() == init.encoder.projection());
    CHECK(full.encoder.bias() == init.encoder.bias());
    for (std::size_t k = 0; k < full.bank.class_tokens.size(); ++k)
        for (std::size_t p = 0; p < full.bank.class_tokens[k].size(); ++p)
            CHECK(full.bank.class_tokens[k][p] == init.bank.class_tokens[k][p]);
    CHECK(full.bank.attention.w_q != init.bank.attention.w_q);
    CHECK(full.bank.shared_tokens[0] != init.bank.shared_tokens[0]);

    t.variant = Variant::no_self_attention;
    const TrainState na_init = init_state(f.manifest, t, c);
    const TrainState na = train(f.manifest, t, c);
    CHECK(na.bank.attention.w_q == na_init.bank.attention.w_q);
    CHECK(na.bank.attention.w_v == na_init.bank.attention.w_v);
    CHECK(na.bank.class_tokens[0][0] != na_init.bank.class_tokens[0][0]);
    CHECK_FALSE(na.bank.use_attention);

    t.variant = Variant::no_sc;
    const TrainState nsc_init = init_state(f.manifest, t, c);
    const TrainState nsc = train(f.manifest, t, c);
    CHECK(nsc.bank.shared_tokens[0] == nsc_init.bank.shared_tokens[0]);
}

TEST_CASE("zero epochs return the initial state")
{
    auto f = synth("epochs0");
    TrainConfig t = quick_config(0);
    const ClassifierConfig c;
    const TrainState st = train(f.manifest, t, c);
    CHECK(st.step == 0);
    CHECK(st.history.empty());
    CHECK(flatten_bank(st.bank) == flatten_bank(init_state(f.manifest, t, c).bank));
}

TEST_CASE("training is deterministic and separates synthetic classes")
{
    auto f = synth("determinism");
    const TrainConfig t = quick_config();
    const ClassifierConfig c;
    const TrainState a = train(f.manifest, t, c);
    const TrainState b = train(f.manifest, t, c);
    CHECK(flatten_bank(a.bank) == flatten_bank(b.bank));
    REQUIRE(a.history.size() == 10);
    CHECK(a.history.back().loss == b.history.back().loss);

    const Metrics train_m = evaluate_samples(f.manifest, few_shot_subset(f.manifest, t), a, c);
    CHECK(train_m.accuracy >= 0.95);
    const Metrics test_m = evaluate(f.manifest, "test", a, c);
    CHECK(test_m.accuracy >= 0.9);
    CHECK(test_m.per_class.size() == 3);

    // The true class has the smallest distance for nearly every test sample.
    std::size_t right = 0, total = 0;
    for (const auto* s : f.manifest.split("test")) {
        const FeatureSet fs_ = load_sample(f.manifest, *s);
        Vec d(3);
        for (std::size_t k = 0; k < 3; ++k)
            d[k] = -score(fs_, build_class_embeddings(a.bank, k, a.encoder), c).d_total;
        right += f.manifest.classes[argmax(d)] == s->label;
        ++total;
    }
    CHECK(static_cast<double>(right) / static_cast<double>(total) >= 0.95);

    CHECK_THROWS_WITH(evaluate(f.manifest, "val", a, c), doctest::Contains("empty split"));
    const Metrics sub = evaluate(f.manifest, "test", a, c, {"class_0", "class_1"});
    CHECK(sub.per_class.size() == 2);
}

TEST_CASE("few-shot subset")
{
    auto f = synth("subset");
    TrainConfig t = quick_config();
    t.shots = 2;
    const auto a = few_shot_subset(f.manifest, t);
    CHECK(a.size() == 6);
    CHECK(a == few_shot_subset(f.manifest, t));
    t.seed = 99;
    CHECK(a != few_shot_subset(f.manifest, t));
    t.shots = 1000;
    CHECK_THROWS(few_shot_subset(f.manifest, t));
}

TEST_CASE("ablation rows")
{
    auto f = synth("ablation");
    const auto rows = run_ablation(f.manifest, quick_config(3), ClassifierConfig{});
    REQUIRE(rows.size() == 6);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].variant == kAllVariants[i]);
        CHECK(rows[i].ok);
        CHECK(rows[i].trainable_scalars > 0);
    }
}

TEST_CASE("train config validation")
{
    TrainConfig t;
    t.validate();
    t.batch_size = 0;
    CHECK_THROWS(t.validate());
    TrainConfig d;
    d.drop_prob = 1.0;
    CHECK_THROWS(d.validate());
    TrainConfig l;
    l.learning_rate = -1.0;
    CHECK_THROWS(l.validate());
}

TEST_CASE("checkpoint round trip")
{
    auto f = synth("checkpoint");
    RunConfig cfg;
    cfg.train = quick_config(2);
    const TrainState st = train(f.manifest, cfg.train, cfg.classifier);
    save_checkpoint(f.dir / "a.uck", st, cfg);
    const Checkpoint back = load_checkpoint(f.dir / "a.uck");
    CHECK(flatten_bank(back.state.bank) == flatten_bank(st.bank));
    CHECK(back.state.encoder.projection() == st.encoder.projection());
    CHECK(back.state.step == st.step);
    CHECK(back.state.history.size() == st.history.size());
    for (std::size_t g = 0; g < kGroupCount; ++g) CHECK(back.state.moments[g].first == st.moments[g].first);
    save_checkpoint(f.dir / "b.uck", back.state, back.config);
    CHECK(encode_checkpoint(back.state, back.config) == encode_checkpoint(st, cfg));

    const Metrics m1 = evaluate(f.manifest, "test", st, cfg.classifier);
    const Metrics m2 = evaluate(f.manifest, "test", back.state, back.config.classifier);
    CHECK(m1.accuracy == m2.accuracy);

    auto bytes = encode_checkpoint(st, cfg);
    bytes[0] = 'X';
    CHECK_THROWS_WITH(decode_checkpoint(bytes), "not a checkpoint file");
    bytes = encode_checkpoint(st, cfg);
    bytes[4] = 9;
    CHECK_THROWS_WITH(decode_checkpoint(bytes), doctest::Contains("unsupported checkpoint version"));
    bytes = encode_checkpoint(st, cfg);
    bytes.resize(bytes.size() - 3);
    CHECK_THROWS_WITH(decode_checkpoint(bytes), doctest::Contains("corrupt checkpoint"));
}

TEST_CASE("config parsing is strict")
{
    const RunConfig c = parse_config_text(R"({"train":{"epochs":3},"classifier":{"rho1":"inf","rho2":0.5}})");
    CHECK(c.train.epochs == 3);
    CHECK(std::isinf(c.classifier.rho1));
    CHECK(c.classifier.rho2 == 0.5);
    CHECK_THROWS_WITH(parse_config_text(R"({"train":{"epoch":3}})"), doctest::Contains("unknown key"));
    CHECK_THROWS_WITH(parse_config_text(R"({"extra":{}})"), doctest::Contains("unknown key"));
    CHECK_THROWS(parse_config_text(R"({"classifier":{"tau":0}})"));
    const RunConfig round = parse_config(config_to_json(c));
    CHECK(config_to_json(round) == config_to_json(c));
}
