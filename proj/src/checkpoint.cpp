#include "uotalign/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace uotalign {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
public:
    void bytes(const void* p, std::size_t n)
    {
        const auto* c = static_cast<const unsigned char*>(p);
        out_.insert(out_.end(), c, c + n);
    }
    void u32(std::uint64_t v)
    {
        if (v > 0xffffffffull) throw Error("checkpoint: field too large");
        const auto x = static_cast<std::uint32_t>(v);
        bytes(&x, 4);
    }
    void text(const std::string& s)
    {
        u32(s.size());
        bytes(s.data(), s.size());
    }
    void tensor(const std::string& name, std::size_t rows, std::size_t cols, std::span<const double> data)
    {
        text(name);
        u32(rows);
        u32(cols);
        bytes(data.data(), data.size() * sizeof(double));
    }
    std::vector<unsigned char> take() { return std::move(out_); }

private:
    std::vector<unsigned char> out_;
};

class Reader {
public:
    explicit Reader(std::span<const unsigned char> in) : in_(in) {}
    void bytes(void* p, std::size_t n)
    {
        if (n > in_.size() - pos_) throw Error("corrupt checkpoint: truncated");
        std::memcpy(p, in_.data() + pos_, n);
        pos_ += n;
    }
    std::uint32_t u32()
    {
        std::uint32_t x = 0;
        bytes(&x, 4);
        return x;
    }
    std::string text()
    {
        std::string s(u32(), '\0');
        bytes(s.data(), s.size());
        return s;
    }
    bool done() const { return pos_ == in_.size(); }

private:
    std::span<const unsigned char> in_;
    std::size_t pos_ = 0;
};

using TensorMap = std::map<std::string, Mat>;

std::string key(std::string_view prefix, std::size_t i) { return std::string(prefix) + "/" + std::to_string(i); }

std::string key(std::string_view prefix, std::size_t i, std::size_t j) { return key(prefix, i) + "/" + std::to_string(j); }

Mat take(TensorMap& tensors, const std::string& name)
{
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw Error("corrupt checkpoint: missing tensor " + name);
    Mat m = std::move(it->second);
    tensors.erase(it);
    return m;
}

json metadata(const TrainState& state, const RunConfig& config)
{
    json cfg = config_to_json(config);
    // Thread count never changes results; keep it out of the file.
    cfg["solver"].erase("threads");
    json history = json::array();
    for (const auto& h : state.history) history.push_back({{"epoch", h.epoch}, {"loss", h.loss}, {"accuracy", h.accuracy}});
    const auto& bank = state.bank;
    return {
        {"format", "uotalign-checkpoint"},
        {"config", cfg},
        {"variant", variant_name(state.variant)},
        {"classes", bank.class_names},
        {"class_prompt_counts",
         [&] {
             std::vector<std::size_t> counts;
             for (const auto& c : bank.class_tokens) counts.push_back(c.size());
             return counts;
         }()},
        {"shared_prompts", bank.shared_tokens.size()},
        {"use_attention", bank.use_attention},
        {"trainable",
         {{"shared_tokens", bank.trainable.shared_tokens},
          {"attention", bank.trainable.attention},
          {"class_tokens", bank.trainable.class_tokens}}},
        {"group_trainable", state.group_trainable},
        {"step", state.step},
        {"epoch", state.epoch},
        {"history", history},
    };
}

}  // namespace

std::vector<unsigned char> encode_checkpoint(const TrainState& state, const RunConfig& config)
{
    const auto& bank = state.bank;
    Writer w;
    w.bytes("UCK1", 4);
    w.u32(kCheckpointVersion);
    w.text(metadata(state, config).dump());

    std::size_t count = bank.shared_tokens.size() + bank.class_words.size() + 3 + 2 + 2 * kGroupCount;
    for (const auto& c : bank.class_tokens) count += c.size();
    w.u32(count);
    for (std::size_t p = 0; p < bank.shared_tokens.size(); ++p) {
        const Mat& m = bank.shared_tokens[p];
        w.tensor(key("shared", p), m.rows(), m.cols(), m.flat());
    }
    for (std::size_t c = 0; c < bank.class_tokens.size(); ++c)
        for (std::size_t p = 0; p < bank.class_tokens[c].size(); ++p) {
            const Mat& m = bank.class_tokens[c][p];
            w.tensor(key("class", c, p), m.rows(), m.cols(), m.flat());
        }
    for (std::size_t c = 0; c < bank.class_words.size(); ++c)
        w.tensor(key("word", c), 1, bank.class_words[c].size(), bank.class_words[c].span());
    for (const auto& [name, m] : {std::pair<const char*, const Mat*>{"attention/w_q", &bank.attention.w_q},
                                  {"attention/w_k", &bank.attention.w_k},
                                  {"attention/w_v", &bank.attention.w_v},
                                  {"encoder/projection", &state.encoder.projection()}})
        w.tensor(name, m->rows(), m->cols(), m->flat());
    w.tensor("encoder/bias", 1, state.encoder.bias().size(), state.encoder.bias().span());
    for (std::size_t g = 0; g < kGroupCount; ++g) {
        const auto& mom = state.moments[g];
        w.tensor(key("adam", g) + "/m", 1, mom.first.size(), mom.first);
        w.tensor(key("adam", g) + "/v", 1, mom.second.size(), mom.second);
    }
    return w.take();
}

Checkpoint decode_checkpoint(std::span<const unsigned char> bytes)
{
    Reader r(bytes);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "UCK1", 4) != 0) throw Error("not a checkpoint file");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) throw Error("unsupported checkpoint version " + std::to_string(version));

    json meta;
    try {
        meta = json::parse(r.text());
    } catch (const json::parse_error& e) {
        throw Error(std::string("corrupt checkpoint: metadata: ") + e.what());
    }

    TensorMap tensors;
    const std::uint32_t count = r.u32();
    for (std::uint32_t t = 0; t < count; ++t) {
        std::string name = r.text();
        const std::size_t rows = r.u32(), cols = r.u32();
        if (rows != 0 && cols > (std::size_t{1} << 40) / rows) throw Error("corrupt checkpoint: tensor too large");
        std::vector<double> data(rows * cols);
        r.bytes(data.data(), data.size() * sizeof(double));
        if (!tensors.emplace(name, Mat(rows, cols, std::move(data))).second)
            throw Error("corrupt checkpoint: duplicate tensor " + name);
    }
    if (!r.done()) throw Error("corrupt checkpoint: trailing bytes");

    Checkpoint ck;
    try {
        json cfg = meta.at("config");
        cfg["solver"].erase("threads");
        ck.config = parse_config(cfg);
        TrainState& s = ck.state;
        PromptBank& bank = s.bank;
        s.variant = parse_variant(meta.at("variant").get<std::string>());
        bank.class_names = meta.at("classes").get<std::vector<std::string>>();
        const auto counts = meta.at("class_prompt_counts").get<std::vector<std::size_t>>();
        if (counts.size() != bank.class_names.size()) throw Error("corrupt checkpoint: class count mismatch");
        for (std::size_t p = 0; p < meta.at("shared_prompts").get<std::size_t>(); ++p)
            bank.shared_tokens.push_back(take(tensors, key("shared", p)));
        bank.class_tokens.resize(counts.size());
        for (std::size_t c = 0; c < counts.size(); ++c) {
            for (std::size_t p = 0; p < counts[c]; ++p) bank.class_tokens[c].push_back(take(tensors, key("class", c, p)));
            const Mat word = take(tensors, key("word", c));
            bank.class_words.emplace_back(std::vector<double>(word.flat().begin(), word.flat().end()));
        }
        bank.attention.w_q = take(tensors, "attention/w_q");
        bank.attention.w_k = take(tensors, "attention/w_k");
        bank.attention.w_v = take(tensors, "attention/w_v");
        bank.use_attention = meta.at("use_attention").get<bool>();
        const auto& tr = meta.at("trainable");
        bank.trainable.shared_tokens = tr.at("shared_tokens").get<bool>();
        bank.trainable.attention = tr.at("attention").get<bool>();
        bank.trainable.class_tokens = tr.at("class_tokens").get<bool>();
        Mat projection = take(tensors, "encoder/projection");
        Mat bias = take(tensors, "encoder/bias");
        s.encoder = FrozenEncoder(std::move(projection), Vec(std::vector<double>(bias.flat().begin(), bias.flat().end())));
        s.group_trainable = meta.at("group_trainable").get<std::array<bool, kGroupCount>>();
        for (std::size_t g = 0; g < kGroupCount; ++g) {
            const Mat m = take(tensors, key("adam", g) + "/m");
            const Mat v = take(tensors, key("adam", g) + "/v");
            s.moments[g].first.assign(m.flat().begin(), m.flat().end());
            s.moments[g].second.assign(v.flat().begin(), v.flat().end());
        }
        s.step = meta.at("step").get<long long>();
        s.epoch = meta.at("epoch").get<int>();
        for (const auto& h : meta.at("history"))
            s.history.push_back({h.at("epoch").get<int>(), h.at("loss").get<double>(), h.at("accuracy").get<double>()});
    } catch (const json::exception& e) {
        throw Error(std::string("corrupt checkpoint: ") + e.what());
    }
    if (!tensors.empty()) throw Error("corrupt checkpoint: unexpected tensor " + tensors.begin()->first);
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const RunConfig& config)
{
    const auto bytes = encode_checkpoint(state, config);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_checkpoint(bytes);
    } catch (const Error& e) {
        throw Error(std::string(e.what()) + ": " + path.string());
    }
}

}  // namespace uotalign
