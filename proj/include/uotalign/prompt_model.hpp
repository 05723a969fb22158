#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "uotalign/numerics.hpp"

namespace uotalign {

// One class worth of LLM-generated descriptions:
// {"class_name": "...", "description": ["...", ...]}
struct DescriptionFile {
    std::string class_name;
    std::vector<std::string> descriptions;
    std::vector<std::string> warnings;
};

DescriptionFile parse_descriptions_json(std::string_view text, std::string_view class_name_hint = {});
DescriptionFile parse_descriptions(const std::filesystem::path& path, std::string_view class_name_hint = {});
std::string descriptions_to_json(const DescriptionFile& file);

// Lowercased alphanumeric words (apostrophes kept inside words).
std::vector<std::string> split_words(std::string_view text);

// 64-bit FNV-1a; stable across platforms.
std::uint64_t hash_word(std::string_view word);

// Frozen word embedding: a unit vector drawn from a generator seeded by the
// word hash mixed with the global seed.
Vec word_embedding(std::string_view word, std::size_t d_tok, std::uint64_t seed);

// L x d_tok token matrix; extra words truncated, missing ones padded with
// the embedding of the reserved "<pad>" word.
Mat tokenize(std::string_view text, std::size_t d_tok, std::size_t length, std::uint64_t seed);

// Class-name token: normalized mean of the name's word embeddings.
Vec class_token(std::string_view class_name, std::size_t d_tok, std::uint64_t seed);

// Single-head self-attention weights, shared by every class.
struct AttentionParams {
    Mat w_q;
    Mat w_k;
    Mat w_v;
};

struct AttentionGrads {
    Mat tokens;
    Mat w_q;
    Mat w_k;
    Mat w_v;
};

// softmax(Q K^T / sqrt(d_k)) V with Q = T W_Q, K = T W_K, V = T W_V.
Mat attention_forward(const Mat& tokens, const AttentionParams& params);

// Row-stochastic attention weights of the forward pass.
Mat attention_weights(const Mat& tokens, const AttentionParams& params);

AttentionGrads attention_backward(const Mat& tokens, const AttentionParams& params, const Mat& upstream);

// Frozen stand-in for the text encoder: mean-pool over tokens, fixed seeded
// linear map, fixed bias, unit normalization.
class FrozenEncoder {
public:
    FrozenEncoder() = default;
    FrozenEncoder(std::size_t d_tok, std::size_t d, std::uint64_t seed);
    FrozenEncoder(Mat projection, Vec bias);

    std::size_t token_dim() const { return projection_.rows(); }
    std::size_t embed_dim() const { return projection_.cols(); }
    const Mat& projection() const { return projection_; }
    const Vec& bias() const { return bias_; }

    Vec pre_normalization(const Mat& tokens) const;
    Vec encode(const Mat& tokens) const;
    // Gradient with respect to the tokens given the gradient on the output.
    Mat backward(const Mat& tokens, std::span<const double> upstream) const;

private:
    Mat projection_;  // d_tok x d
    Vec bias_;        // d
};

Vec encode_prompt(const Mat& tokens, const FrozenEncoder& encoder);

struct ModelConfig {
    std::size_t token_dim = 32;
    std::size_t embed_dim = 32;
    std::size_t attention_dim = 32;
    // Tokens per prompt, class token included.
    std::size_t prompt_length = 8;
    std::size_t shared_prompts = 4;
    std::size_t class_prompts = 4;
    std::uint64_t token_seed = 7;
    std::uint64_t encoder_seed = 11;
    // Let class-specific tokens receive gradients (off: only attention and
    // shared tokens train).
    bool train_class_tokens = false;
};

struct TrainableFlags {
    bool shared_tokens = true;
    bool attention = true;
    bool class_tokens = false;
};

struct PromptBank {
    std::vector<std::string> class_names;
    // prompt_length - 1 learnable context rows per shared prompt; one copy for
    // all classes.
    std::vector<Mat> shared_tokens;
    // class_tokens[c][p]: prompt_length x d_tok, class token in the last row.
    std::vector<std::vector<Mat>> class_tokens;
    std::vector<Vec> class_words;
    AttentionParams attention;
    TrainableFlags trainable;
    bool use_attention = true;

    std::size_t num_classes() const { return class_names.size(); }
    std::size_t class_index(std::string_view name) const;
    std::size_t token_dim() const;
    std::size_t shared_count() const { return shared_tokens.size(); }
    std::size_t class_prompt_count() const;
    // Trainable scalars under the current flags.
    std::size_t trainable_scalars() const;
};

// Tokenizes each class's descriptions; random_class_tokens replaces them with
// seeded random unit tokens of the same shape.
PromptBank build_prompt_bank(const std::vector<DescriptionFile>& classes, const ModelConfig& cfg,
                             std::uint64_t init_seed, bool random_class_tokens = false);

struct ClassEmbeddings {
    Mat shared;    // P_ds x d
    Mat specific;  // P_cs x d
};

// Full token matrix of shared prompt p for class c (context rows + class token).
Mat shared_prompt_tokens(const PromptBank& bank, std::size_t class_index, std::size_t prompt);

ClassEmbeddings build_class_embeddings(const PromptBank& bank, std::size_t class_index, const FrozenEncoder& encoder);
ClassEmbeddings build_class_embeddings(const PromptBank& bank, std::string_view class_name,
                                       const FrozenEncoder& encoder);

// Gradient buffers shaped like the bank's trainable tensors.
struct PromptGrads {
    std::vector<Mat> shared_tokens;
    std::vector<std::vector<Mat>> class_tokens;
    Mat w_q, w_k, w_v;

    static PromptGrads zeros_like(const PromptBank& bank);
};

// Accumulates d(loss)/d(parameters) given d(loss)/d(G_ds) and d(loss)/d(G_cs)
// for one class. Either upstream may be empty to skip that path.
void backprop_class_embeddings(const PromptBank& bank, std::size_t class_index, const FrozenEncoder& encoder,
                               const Mat& d_shared, const Mat& d_specific, PromptGrads& grads);

}  // namespace uotalign
