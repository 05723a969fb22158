#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "uotalign/classifier.hpp"
#include "uotalign/features.hpp"
#include "uotalign/prompt_model.hpp"

namespace uotalign {

enum class Variant { full, no_csc, no_sc, no_gpt_init, no_uot, no_self_attention };

inline constexpr std::array<Variant, 6> kAllVariants{Variant::full,        Variant::no_csc, Variant::no_sc,
                                                     Variant::no_gpt_init, Variant::no_uot, Variant::no_self_attention};

std::string variant_name(Variant v);
Variant parse_variant(std::string_view name);

struct TrainConfig {
    double learning_rate = 2e-3;
    std::size_t batch_size = 32;
    int epochs = 50;
    // 0 takes the manifest's shot count.
    int shots = 0;
    std::uint64_t seed = 1;
    Variant variant = Variant::full;
    double jitter_sigma = 0.05;
    double drop_prob = 0.1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    // Train on this class subset only (base classes); empty means all.
    std::vector<std::string> train_classes;
    ModelConfig model;

    void validate() const;
};

// Classifier settings after applying a variant's ablation.
ClassifierConfig variant_classifier(const ClassifierConfig& base, Variant v);

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
};

struct AdamMoments {
    std::vector<double> first;
    std::vector<double> second;
};

enum ParamGroup : std::size_t { kSharedGroup = 0, kAttentionGroup = 1, kClassTokenGroup = 2, kGroupCount = 3 };

struct TrainState {
    Variant variant = Variant::full;
    PromptBank bank;
    FrozenEncoder encoder;
    std::array<AdamMoments, kGroupCount> moments;
    std::array<bool, kGroupCount> group_trainable{};
    long long step = 0;
    int epoch = 0;
    std::vector<EpochRecord> history;
};

// Bank, frozen encoder and zeroed optimizer state for the manifest's classes.
TrainState init_state(const DatasetManifest& manifest, const TrainConfig& cfg, const ClassifierConfig& ccfg);

struct LossAndGrad {
    double loss = 0.0;
    std::size_t correct = 0;
    PromptGrads grads;
    Mat probs;
};

// Cross-entropy over the batch with every transport plan solved once and then
// held fixed for the backward pass. labels index into classes; classes index
// into the bank.
LossAndGrad loss_and_gradient(const std::vector<FeatureSet>& batch, const std::vector<std::size_t>& labels,
                              const std::vector<std::size_t>& classes, const PromptBank& bank,
                              const FrozenEncoder& encoder, const ClassifierConfig& ccfg);

struct StepResult {
    double loss = 0.0;
    std::size_t correct = 0;
    std::size_t count = 0;
};

// Augment, solve, backpropagate through the fixed plans, Adam update.
StepResult train_step(const std::vector<FeatureSet>& batch, TrainState& state, const TrainConfig& cfg,
                      const ClassifierConfig& ccfg, std::uint64_t augment_seed);

// Seeded few-shot subsample of the train split: shots sample ids per class.
std::vector<const SampleEntry*> few_shot_subset(const DatasetManifest& manifest, const TrainConfig& cfg);

TrainState train(const DatasetManifest& manifest, const TrainConfig& cfg, const ClassifierConfig& ccfg);

struct Metrics {
    double accuracy = 0.0;
    std::map<std::string, double> per_class;
    double mean_loss = 0.0;
    std::size_t count = 0;
};

// Clean (unaugmented) accuracy on a split. A non-empty class list restricts
// both the samples and the candidate classes.
Metrics evaluate(const DatasetManifest& manifest, std::string_view split, const TrainState& state,
                 const ClassifierConfig& ccfg, const std::vector<std::string>& classes = {});
Metrics evaluate_samples(const DatasetManifest& manifest, const std::vector<const SampleEntry*>& samples,
                         const TrainState& state, const ClassifierConfig& ccfg,
                         const std::vector<std::string>& classes = {});

struct AblationRow {
    Variant variant = Variant::full;
    bool ok = false;
    std::string error;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    double final_loss = 0.0;
    std::size_t trainable_scalars = 0;
};

std::vector<AblationRow> run_ablation(const DatasetManifest& manifest, const TrainConfig& cfg,
                                      const ClassifierConfig& ccfg);

}  // namespace uotalign
