#include "uotalign/prompt_model.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "uotalign/seeding.hpp"

namespace uotalign {

namespace {

using nlohmann::json;

constexpr std::string_view kPadWord = "<pad>";

Vec random_unit(std::mt19937_64& rng, std::size_t dim)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(dim);
    double n2 = 0.0;
    do {
        n2 = 0.0;
        for (double& x : v) {
            x = normal(rng);
            n2 += x * x;
        }
    } while (n2 == 0.0);
    const double inv = 1.0 / std::sqrt(n2);
    for (double& x : v) x *= inv;
    return Vec(std::move(v));
}

Mat random_gaussian(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double stddev)
{
    std::normal_distribution<double> normal(0.0, stddev);
    std::vector<double> data(rows * cols);
    for (double& x : data) x = normal(rng);
    return Mat(rows, cols, std::move(data));
}

void set_row(Mat& m, std::size_t r, const Vec& v)
{
    std::copy(v.begin(), v.end(), m.row(r).begin());
}

void add_into(Mat& dst, const Mat& src)
{
    for (std::size_t k = 0; k < dst.size(); ++k) dst.flat()[k] += src.flat()[k];
}

}  // namespace

DescriptionFile parse_descriptions_json(std::string_view text, std::string_view class_name_hint)
{
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(std::string("schema violation: malformed JSON (") + e.what() + ")");
    }
    if (!doc.is_object() || !doc.contains("description")) throw Error("schema violation: missing key \"description\"");
    const auto& list = doc.at("description");
    if (!list.is_array()) throw Error("schema violation: \"description\" must be an array");
    if (list.empty()) throw Error("no descriptions");

    DescriptionFile out;
    if (doc.contains("class_name")) {
        if (!doc.at("class_name").is_string()) throw Error("schema violation: \"class_name\" must be text");
        out.class_name = doc.at("class_name").get<std::string>();
    } else {
        out.class_name = std::string(class_name_hint);
    }
    for (const auto& item : list) {
        if (!item.is_string()) throw Error("schema violation: descriptions must be text");
        auto s = item.get<std::string>();
        if (s.empty()) throw Error("schema violation: empty description");
        out.descriptions.push_back(std::move(s));
    }
    if (out.descriptions.size() != 4) {
        out.warnings.push_back("expected 4 descriptions, got " + std::to_string(out.descriptions.size()));
    }
    return out;
}

DescriptionFile parse_descriptions(const std::filesystem::path& path, std::string_view class_name_hint)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open description file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_descriptions_json(buf.str(), class_name_hint);
    } catch (const Error& e) {
        throw Error(std::string(e.what()) + " in " + path.string());
    }
}

std::string descriptions_to_json(const DescriptionFile& file)
{
    json doc;
    doc["class_name"] = file.class_name;
    doc["description"] = file.descriptions;
    return doc.dump(2) + "\n";
}

std::vector<std::string> split_words(std::string_view text)
{
    std::vector<std::string> words;
    std::string current;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || (c == '\'' && !current.empty()) || c >= 0x80) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else if (!current.empty()) {
            words.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) words.push_back(std::move(current));
    return words;
}

std::uint64_t hash_word(std::string_view word)
{
    std::uint64_t h = 14695981039346656037ull;
    for (char c : word) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

Vec word_embedding(std::string_view word, std::size_t d_tok, std::uint64_t seed)
{
    std::mt19937_64 rng(mix_seed(hash_word(word), seed));
    return random_unit(rng, d_tok);
}

Mat tokenize(std::string_view text, std::size_t d_tok, std::size_t length, std::uint64_t seed)
{
    if (d_tok == 0 || length == 0) throw Error("tokenize: token dimension and length must be positive");
    const auto words = split_words(text);
    if (words.empty()) throw Error("tokenize: empty text");
    Mat out(length, d_tok);
    const Vec pad = word_embedding(kPadWord, d_tok, seed);
    for (std::size_t r = 0; r < length; ++r) set_row(out, r, r < words.size() ? word_embedding(words[r], d_tok, seed) : pad);
    return out;
}

Vec class_token(std::string_view class_name, std::size_t d_tok, std::uint64_t seed)
{
    const auto words = split_words(class_name);
    if (words.empty()) throw Error("class_token: empty class name");
    std::vector<double> acc(d_tok, 0.0);
    for (const auto& w : words) {
        const Vec e = word_embedding(w, d_tok, seed);
        for (std::size_t k = 0; k < d_tok; ++k) acc[k] += e[k];
    }
    const double n = norm2(acc);
    if (n == 0.0) throw Error("degenerate embedding");
    for (double& x : acc) x /= n;
    return Vec(std::move(acc));
}

namespace {

struct AttentionForward {
    Mat q, k, v, weights, out;
};

AttentionForward run_attention(const Mat& t, const AttentionParams& params)
{
    if (t.cols() != params.w_q.rows() || t.cols() != params.w_k.rows() || t.cols() != params.w_v.rows())
        throw Error("attention: token dimension does not match weights");
    if (params.w_q.cols() != params.w_k.cols()) throw Error("attention: query/key width mismatch");
    AttentionForward f;
    f.q = matmul(t, params.w_q);
    f.k = matmul(t, params.w_k);
    f.v = matmul(t, params.w_v);
    const double scale = 1.0 / std::sqrt(static_cast<double>(params.w_q.cols()));
    Mat scores = matmul_nt(f.q, f.k);
    f.weights = Mat(t.rows(), t.rows());
    for (std::size_t i = 0; i < t.rows(); ++i) {
        auto row = scores.row(i);
        for (double& s : row) s *= scale;
        const double lse = logsumexp(row);
        for (std::size_t j = 0; j < t.rows(); ++j) f.weights(i, j) = std::exp(row[j] - lse);
    }
    f.out = matmul(f.weights, f.v);
    return f;
}

}  // namespace

Mat attention_forward(const Mat& tokens, const AttentionParams& params)
{
    return run_attention(tokens, params).out;
}

Mat attention_weights(const Mat& tokens, const AttentionParams& params)
{
    return run_attention(tokens, params).weights;
}

AttentionGrads attention_backward(const Mat& tokens, const AttentionParams& params, const Mat& upstream)
{
    const auto f = run_attention(tokens, params);
    if (upstream.rows() != f.out.rows() || upstream.cols() != f.out.cols())
        throw Error("attention_backward: upstream shape mismatch");
    const std::size_t n = tokens.rows();
    const double scale = 1.0 / std::sqrt(static_cast<double>(params.w_q.cols()));

    const Mat d_weights = matmul_nt(upstream, f.v);  // L x L
    const Mat d_v = matmul_tn(f.weights, upstream);  // L x d_k
    Mat d_scores(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        double inner = 0.0;
        for (std::size_t j = 0; j < n; ++j) inner += d_weights(i, j) * f.weights(i, j);
        for (std::size_t j = 0; j < n; ++j) d_scores(i, j) = f.weights(i, j) * (d_weights(i, j) - inner) * scale;
    }
    const Mat d_q = matmul(d_scores, f.k);
    const Mat d_k = matmul_tn(d_scores, f.q);

    AttentionGrads g;
    g.w_q = matmul_tn(tokens, d_q);
    g.w_k = matmul_tn(tokens, d_k);
    g.w_v = matmul_tn(tokens, d_v);
    g.tokens = matmul_nt(d_q, params.w_q);
    add_into(g.tokens, matmul_nt(d_k, params.w_k));
    add_into(g.tokens, matmul_nt(d_v, params.w_v));
    return g;
}

FrozenEncoder::FrozenEncoder(std::size_t d_tok, std::size_t d, std::uint64_t seed)
{
    if (d_tok == 0 || d == 0) throw Error("encoder: dimensions must be positive");
    std::mt19937_64 rng(mix_seed(seed, 0x656e636f646572ull));
    projection_ = random_gaussian(rng, d_tok, d, 1.0 / std::sqrt(static_cast<double>(d_tok)));
    std::normal_distribution<double> normal(0.0, 0.05);
    std::vector<double> b(d);
    for (double& x : b) x = normal(rng);
    bias_ = Vec(std::move(b));
}

FrozenEncoder::FrozenEncoder(Mat projection, Vec bias) : projection_(std::move(projection)), bias_(std::move(bias))
{
    if (bias_.size() != projection_.cols()) throw Error("encoder: bias length does not match projection");
}

Vec FrozenEncoder::pre_normalization(const Mat& tokens) const
{
    if (tokens.cols() != token_dim()) throw Error("encoder dimension mismatch");
    if (tokens.rows() == 0) throw Error("encoder: no tokens");
    std::vector<double> mean(token_dim(), 0.0);
    for (std::size_t r = 0; r < tokens.rows(); ++r)
        for (std::size_t k = 0; k < token_dim(); ++k) mean[k] += tokens(r, k);
    for (double& x : mean) x /= static_cast<double>(tokens.rows());
    std::vector<double> z(bias_.begin(), bias_.end());
    for (std::size_t k = 0; k < token_dim(); ++k)
        for (std::size_t j = 0; j < embed_dim(); ++j) z[j] += mean[k] * projection_(k, j);
    return Vec(std::move(z));
}

Vec FrozenEncoder::encode(const Mat& tokens) const
{
    Vec z = pre_normalization(tokens);
    const double n = norm2(z.span());
    if (n == 0.0) throw Error("degenerate encoding");
    for (double& x : z) x /= n;
    return z;
}

Mat FrozenEncoder::backward(const Mat& tokens, std::span<const double> upstream) const
{
    if (upstream.size() != embed_dim()) throw Error("encoder backward: upstream length mismatch");
    const Vec z = pre_normalization(tokens);
    const double n = norm2(z.span());
    if (n == 0.0) throw Error("degenerate encoding");
    double e_dot = 0.0;
    for (std::size_t j = 0; j < embed_dim(); ++j) e_dot += z[j] / n * upstream[j];
    std::vector<double> dz(embed_dim());
    for (std::size_t j = 0; j < embed_dim(); ++j) dz[j] = (upstream[j] - z[j] / n * e_dot) / n;
    std::vector<double> d_mean(token_dim(), 0.0);
    for (std::size_t k = 0; k < token_dim(); ++k)
        for (std::size_t j = 0; j < embed_dim(); ++j) d_mean[k] += projection_(k, j) * dz[j];
    Mat out(tokens.rows(), token_dim());
    const double inv_l = 1.0 / static_cast<double>(tokens.rows());
    for (std::size_t r = 0; r < tokens.rows(); ++r)
        for (std::size_t k = 0; k < token_dim(); ++k) out(r, k) = d_mean[k] * inv_l;
    return out;
}

Vec encode_prompt(const Mat& tokens, const FrozenEncoder& encoder)
{
    return encoder.encode(tokens);
}

std::size_t PromptBank::class_index(std::string_view name) const
{
    for (std::size_t i = 0; i < class_names.size(); ++i)
        if (class_names[i] == name) return i;
    throw Error("unknown class: " + std::string(name));
}

std::size_t PromptBank::token_dim() const
{
    return attention.w_q.rows();
}

std::size_t PromptBank::class_prompt_count() const
{
    return class_tokens.empty() ? 0 : class_tokens.front().size();
}

std::size_t PromptBank::trainable_scalars() const
{
    std::size_t n = 0;
    if (trainable.shared_tokens)
        for (const auto& m : shared_tokens) n += m.size();
    if (trainable.attention && use_attention) n += attention.w_q.size() + attention.w_k.size() + attention.w_v.size();
    if (trainable.class_tokens)
        for (const auto& per_class : class_tokens)
            for (const auto& m : per_class) n += m.size();
    return n;
}

PromptBank build_prompt_bank(const std::vector<DescriptionFile>& classes, const ModelConfig& cfg,
                             std::uint64_t init_seed, bool random_class_tokens)
{
    if (classes.empty()) throw Error("prompt bank: no classes");
    if (cfg.prompt_length < 2) throw Error("prompt bank: prompt_length must be >= 2");
    if (cfg.attention_dim != cfg.token_dim) throw Error("prompt bank: attention_dim must equal token_dim");
    if (cfg.shared_prompts == 0 && cfg.class_prompts == 0) throw Error("prompt bank: no prompts");
    const std::size_t d_tok = cfg.token_dim;
    const std::size_t context = cfg.prompt_length - 1;

    PromptBank bank;
    std::mt19937_64 shared_rng(mix_seed(init_seed, 0x736861726564ull));
    for (std::size_t p = 0; p < cfg.shared_prompts; ++p) {
        Mat tokens(context, d_tok);
        for (std::size_t r = 0; r < context; ++r) set_row(tokens, r, random_unit(shared_rng, d_tok));
        bank.shared_tokens.push_back(std::move(tokens));
    }

    std::mt19937_64 class_rng(mix_seed(init_seed, 0x636c617373ull));
    for (const auto& file : classes) {
        if (file.class_name.empty()) throw Error("prompt bank: class without a name");
        for (const auto& existing : bank.class_names)
            if (existing == file.class_name) throw Error("prompt bank: duplicate class " + file.class_name);
        if (file.descriptions.size() < cfg.class_prompts)
            throw Error("prompt bank: class " + file.class_name + " has " + std::to_string(file.descriptions.size()) +
                        " descriptions, need " + std::to_string(cfg.class_prompts));
        bank.class_names.push_back(file.class_name);
        const Vec word = class_token(file.class_name, d_tok, cfg.token_seed);
        std::vector<Mat> prompts;
        for (std::size_t p = 0; p < cfg.class_prompts; ++p) {
            Mat tokens(cfg.prompt_length, d_tok);
            if (random_class_tokens) {
                for (std::size_t r = 0; r < context; ++r) set_row(tokens, r, random_unit(class_rng, d_tok));
            } else {
                const Mat desc = tokenize(file.descriptions[p], d_tok, context, cfg.token_seed);
                std::copy(desc.flat().begin(), desc.flat().end(), tokens.flat().begin());
            }
            set_row(tokens, context, word);
            prompts.push_back(std::move(tokens));
        }
        bank.class_tokens.push_back(std::move(prompts));
        bank.class_words.push_back(word);
    }

    std::mt19937_64 attn_rng(mix_seed(init_seed, 0x61747465ull));
    const double stddev = 1.0 / std::sqrt(static_cast<double>(d_tok));
    bank.attention.w_q = random_gaussian(attn_rng, d_tok, cfg.attention_dim, stddev);
    bank.attention.w_k = random_gaussian(attn_rng, d_tok, cfg.attention_dim, stddev);
    bank.attention.w_v = random_gaussian(attn_rng, d_tok, cfg.attention_dim, 0.02);
    for (std::size_t k = 0; k < d_tok; ++k) bank.attention.w_v(k, k) += 1.0;

    bank.trainable = TrainableFlags{true, true, cfg.train_class_tokens};
    return bank;
}

Mat shared_prompt_tokens(const PromptBank& bank, std::size_t class_index, std::size_t prompt)
{
    const Mat& context = bank.shared_tokens.at(prompt);
    Mat tokens(context.rows() + 1, context.cols());
    std::copy(context.flat().begin(), context.flat().end(), tokens.flat().begin());
    set_row(tokens, context.rows(), bank.class_words.at(class_index));
    return tokens;
}

ClassEmbeddings build_class_embeddings(const PromptBank& bank, std::size_t class_index, const FrozenEncoder& encoder)
{
    if (class_index >= bank.num_classes()) throw Error("unknown class");
    ClassEmbeddings out;
    out.shared = Mat(bank.shared_count(), encoder.embed_dim());
    for (std::size_t p = 0; p < bank.shared_count(); ++p)
        set_row(out.shared, p, encoder.encode(shared_prompt_tokens(bank, class_index, p)));
    const auto& prompts = bank.class_tokens[class_index];
    out.specific = Mat(prompts.size(), encoder.embed_dim());
    for (std::size_t p = 0; p < prompts.size(); ++p) {
        const Mat input = bank.use_attention ? attention_forward(prompts[p], bank.attention) : prompts[p];
        set_row(out.specific, p, encoder.encode(input));
    }
    return out;
}

ClassEmbeddings build_class_embeddings(const PromptBank& bank, std::string_view class_name,
                                       const FrozenEncoder& encoder)
{
    return build_class_embeddings(bank, bank.class_index(class_name), encoder);
}

PromptGrads PromptGrads::zeros_like(const PromptBank& bank)
{
    PromptGrads g;
    for (const auto& m : bank.shared_tokens) g.shared_tokens.emplace_back(m.rows(), m.cols());
    for (const auto& per_class : bank.class_tokens) {
        std::vector<Mat> row;
        for (const auto& m : per_class) row.emplace_back(m.rows(), m.cols());
        g.class_tokens.push_back(std::move(row));
    }
    g.w_q = Mat(bank.attention.w_q.rows(), bank.attention.w_q.cols());
    g.w_k = Mat(bank.attention.w_k.rows(), bank.attention.w_k.cols());
    g.w_v = Mat(bank.attention.w_v.rows(), bank.attention.w_v.cols());
    return g;
}

void backprop_class_embeddings(const PromptBank& bank, std::size_t class_index, const FrozenEncoder& encoder,
                               const Mat& d_shared, const Mat& d_specific, PromptGrads& grads)
{
    if (class_index >= bank.num_classes()) throw Error("unknown class");
    if (d_shared.size() > 0) {
        if (d_shared.rows() != bank.shared_count()) throw Error("backprop: shared gradient shape mismatch");
        for (std::size_t p = 0; p < bank.shared_count(); ++p) {
            const Mat tokens = shared_prompt_tokens(bank, class_index, p);
            const Mat d_tokens = encoder.backward(tokens, d_shared.row(p));
            Mat& dst = grads.shared_tokens[p];
            for (std::size_t r = 0; r < dst.rows(); ++r)
                for (std::size_t k = 0; k < dst.cols(); ++k) dst(r, k) += d_tokens(r, k);
        }
    }
    if (d_specific.size() > 0) {
        const auto& prompts = bank.class_tokens[class_index];
        if (d_specific.rows() != prompts.size()) throw Error("backprop: class-specific gradient shape mismatch");
        for (std::size_t p = 0; p < prompts.size(); ++p) {
            if (bank.use_attention) {
                const Mat attended = attention_forward(prompts[p], bank.attention);
                const Mat d_attended = encoder.backward(attended, d_specific.row(p));
                const AttentionGrads ag = attention_backward(prompts[p], bank.attention, d_attended);
                add_into(grads.w_q, ag.w_q);
                add_into(grads.w_k, ag.w_k);
                add_into(grads.w_v, ag.w_v);
                add_into(grads.class_tokens[class_index][p], ag.tokens);
            } else {
                add_into(grads.class_tokens[class_index][p], encoder.backward(prompts[p], d_specific.row(p)));
            }
        }
    }
}

}  // namespace uotalign
