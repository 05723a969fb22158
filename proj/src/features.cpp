#include "uotalign/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>

#include "json.hpp"
#include "uotalign/prompt_model.hpp"
#include "uotalign/seeding.hpp"

namespace uotalign {

namespace {

using nlohmann::json;

constexpr std::size_t kHeaderBytes = 12;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v)
{
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<unsigned char>((v >> (8 * b)) & 0xffu));
}

std::uint32_t get_u32(std::span<const unsigned char> bytes, std::size_t offset)
{
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(bytes[offset + b]) << (8 * b);
    return v;
}

void normalize_rows(Mat& m)
{
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        const double n = norm2(row);
        if (n == 0.0) throw Error("degenerate embedding");
        for (double& x : row) x /= n;
    }
}

Vec random_unit_vec(std::mt19937_64& rng, std::size_t dim)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(dim);
    for (double& x : v) x = normal(rng);
    const double n = norm2(v);
    for (double& x : v) x /= n;
    return Vec(std::move(v));
}

const char* const kAdjectives[] = {"striped", "glossy", "round", "tall", "speckled", "pale", "bright",
                                   "fuzzy", "slender", "curved", "dark", "spotted", "narrow", "wide"};
const char* const kNouns[] = {"wings", "petals", "tail", "ears", "stem", "shell", "fins", "leaves",
                              "handle", "wheels", "beak", "fur", "horns", "scales"};
const char* const kScenes[] = {"in a sunny garden", "on a wooden table", "near a quiet lake", "under soft light",
                               "against a white wall", "in tall grass", "on a busy street", "at dusk"};

std::string synth_description(std::mt19937_64& rng, const std::string& class_name)
{
    auto pick = [&](const auto& list) {
        std::uniform_int_distribution<std::size_t> dist(0, std::size(list) - 1);
        return std::string(list[dist(rng)]);
    };
    return "A " + class_name + " with " + pick(kAdjectives) + " " + pick(kNouns) + " and " + pick(kAdjectives) +
           " " + pick(kNouns) + " " + pick(kScenes) + ".";
}

}  // namespace

std::vector<unsigned char> encode_embedding(const Mat& m)
{
    if (m.rows() > 0xffffffffull || m.cols() > 0xffffffffull) throw Error("embedding too large for EMB1");
    std::vector<unsigned char> out{'E', 'M', 'B', '1'};
    out.reserve(kHeaderBytes + 4 * m.size());
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (double x : m.flat()) {
        const float f = static_cast<float>(x);
        if (!std::isfinite(f)) throw Error("invalid payload: value not representable as f32");
        put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
    return out;
}

Mat decode_embedding(std::span<const unsigned char> bytes)
{
    if (bytes.size() < kHeaderBytes) throw Error("corrupt file: truncated header");
    if (std::memcmp(bytes.data(), "EMB1", 4) != 0) throw Error("not an embedding file");
    const std::uint64_t rows = get_u32(bytes, 4);
    const std::uint64_t cols = get_u32(bytes, 8);
    if (bytes.size() != kHeaderBytes + 4 * rows * cols)
        throw Error("corrupt file: header declares " + std::to_string(rows) + "x" + std::to_string(cols) + " but payload has " +
                    std::to_string((bytes.size() - kHeaderBytes) / 4) + " values");
    std::vector<double> data(rows * cols);
    for (std::size_t k = 0; k < data.size(); ++k) {
        const float f = std::bit_cast<float>(get_u32(bytes, kHeaderBytes + 4 * k));
        if (!std::isfinite(f)) throw Error("invalid payload: non-finite value");
        data[k] = f;
    }
    return Mat(rows, cols, std::move(data));
}

Mat read_embedding_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_embedding(bytes);
    } catch (const Error& e) {
        throw Error(std::string(e.what()) + ": " + path.string());
    }
}

void write_embedding_file(const std::filesystem::path& path, const Mat& m)
{
    const auto bytes = encode_embedding(m);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + path.string());
}

FeatureSet make_feature_set(Mat features, std::string sample_id, std::optional<std::string> label)
{
    if (features.rows() == 0) throw Error("feature set: no tokens");
    normalize_rows(features);
    FeatureSet fs;
    fs.weights = Vec(features.rows(), 1.0 / static_cast<double>(features.rows()));
    fs.features = std::move(features);
    fs.sample_id = std::move(sample_id);
    fs.label = std::move(label);
    return fs;
}

std::vector<const SampleEntry*> DatasetManifest::split(std::string_view name) const
{
    std::vector<const SampleEntry*> out;
    for (const auto& s : samples)
        if (s.split == name) out.push_back(&s);
    return out;
}

std::filesystem::path DatasetManifest::resolve(const std::string& path) const
{
    const std::filesystem::path p(path);
    return p.is_absolute() ? p : base_dir / p;
}

const SampleEntry& DatasetManifest::sample(std::string_view id) const
{
    for (const auto& s : samples)
        if (s.id == id) return s;
    throw Error("unknown sample: " + std::string(id));
}

bool DatasetManifest::has_class(std::string_view name) const
{
    return std::find(classes.begin(), classes.end(), name) != classes.end();
}

DatasetManifest read_manifest(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw Error("cannot open manifest " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(std::string("manifest: malformed JSON: ") + e.what());
    }
    static const std::set<std::string> known{"classes", "samples", "shots", "seed", "descriptions"};
    for (const auto& [key, _] : doc.items())
        if (!known.count(key)) throw Error("manifest: unknown key \"" + key + "\"");
    DatasetManifest m;
    try {
        m.classes = doc.at("classes").get<std::vector<std::string>>();
        for (const auto& s : doc.at("samples")) {
            for (const auto& [key, _] : s.items())
                if (key != "id" && key != "class" && key != "path" && key != "split")
                    throw Error("manifest: unknown sample key \"" + key + "\"");
            m.samples.push_back({s.at("id").get<std::string>(), s.at("class").get<std::string>(),
                                 s.at("path").get<std::string>(), s.at("split").get<std::string>()});
        }
        m.shots = doc.value("shots", 0);
        m.seed = doc.value("seed", std::uint64_t{0});
        if (doc.contains("descriptions")) m.descriptions = doc.at("descriptions").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw Error(std::string("manifest: ") + e.what());
    }
    if (!m.descriptions.empty() && m.descriptions.size() != m.classes.size())
        throw Error("manifest: descriptions must list one file per class");
    for (const auto& s : m.samples)
        if (!m.has_class(s.label)) throw Error("manifest: sample " + s.id + " has unknown class " + s.label);
    m.base_dir = path.parent_path();
    return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest)
{
    json doc;
    doc["classes"] = manifest.classes;
    json samples = json::array();
    for (const auto& s : manifest.samples)
        samples.push_back({{"id", s.id}, {"class", s.label}, {"path", s.path}, {"split", s.split}});
    doc["samples"] = std::move(samples);
    doc["shots"] = manifest.shots;
    doc["seed"] = manifest.seed;
    if (!manifest.descriptions.empty()) doc["descriptions"] = manifest.descriptions;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write manifest " + path.string());
    out << doc.dump(2) << "\n";
}

FeatureSet load_sample(const DatasetManifest& manifest, const SampleEntry& entry)
{
    return make_feature_set(read_embedding_file(manifest.resolve(entry.path)), entry.id, entry.label);
}

DatasetManifest synth_dataset(const SynthOptions& opts, const std::filesystem::path& out_dir)
{
    if (opts.num_classes < 1 || opts.per_class < 1 || opts.tokens < 1 || opts.dim < 1)
        throw Error("synth_dataset: counts must be >= 1");
    if (!(opts.separation >= 0.0)) throw Error("synth_dataset: separation must be >= 0");
    std::filesystem::create_directories(out_dir / "samples");
    std::filesystem::create_directories(out_dir / "descriptions");

    DatasetManifest m;
    m.shots = opts.shots;
    m.seed = opts.seed;
    m.base_dir = out_dir;

    std::mt19937_64 anchor_rng(mix_seed(opts.seed, 0x616e63686f72ull));
    Mat anchors(opts.num_classes, opts.dim);
    for (std::size_t c = 0; c < opts.num_classes; ++c) {
        const Vec a = random_unit_vec(anchor_rng, opts.dim);
        std::copy(a.begin(), a.end(), anchors.row(c).begin());
    }
    write_embedding_file(out_dir / "anchors.emb", anchors);

    std::mt19937_64 text_rng(mix_seed(opts.seed, 0x74657874ull));
    const std::size_t train_count =
        static_cast<std::size_t>(std::ceil(opts.train_fraction * static_cast<double>(opts.per_class)));
    std::size_t serial = 0;
    for (std::size_t c = 0; c < opts.num_classes; ++c) {
        const std::string name = "class_" + std::to_string(c);
        m.classes.push_back(name);

        DescriptionFile desc;
        desc.class_name = name;
        for (int k = 0; k < 4; ++k) desc.descriptions.push_back(synth_description(text_rng, name));
        const std::string desc_path = "descriptions/" + name + ".json";
        std::ofstream(out_dir / desc_path, std::ios::trunc) << descriptions_to_json(desc);
        m.descriptions.push_back(desc_path);

        for (std::size_t s = 0; s < opts.per_class; ++s, ++serial) {
            std::mt19937_64 rng(mix_seed(opts.seed, 0x1000 + serial));
            std::normal_distribution<double> normal(0.0, 1.0);
            Mat f(opts.tokens, opts.dim);
            for (std::size_t r = 0; r < opts.tokens; ++r) {
                for (std::size_t k = 0; k < opts.dim; ++k) f(r, k) = anchors(c, k) * opts.separation + normal(rng);
            }
            normalize_rows(f);
            char id[64];
            std::snprintf(id, sizeof(id), "%s_%04zu", name.c_str(), s);
            const std::string path = std::string("samples/") + id + ".emb";
            write_embedding_file(out_dir / path, f);
            m.samples.push_back({id, name, path, s < train_count ? "train" : "test"});
        }
    }
    write_manifest(out_dir / "manifest.json", m);
    return m;
}

FeatureSet augment(const FeatureSet& fs, double jitter_sigma, double drop_prob, std::uint64_t rng_seed)
{
    if (!(jitter_sigma >= 0.0)) throw Error("augment: jitter_sigma must be >= 0");
    if (!(drop_prob >= 0.0 && drop_prob < 1.0)) throw Error("augment: drop_prob must be in [0, 1)");
    FeatureSet out = fs;
    std::mt19937_64 rng(rng_seed);
    if (jitter_sigma > 0.0) {
        const double per_coord = jitter_sigma / std::sqrt(static_cast<double>(out.features.cols()));
        std::normal_distribution<double> normal(0.0, per_coord);
        for (double& x : out.features.flat()) x += normal(rng);
        normalize_rows(out.features);
    }
    if (drop_prob > 0.0) {
        std::bernoulli_distribution drop(drop_prob);
        bool any_kept = false;
        for (std::size_t r = 0; r < out.weights.size(); ++r) {
            if (drop(rng)) out.weights[r] = 0.0;
            any_kept = any_kept || out.weights[r] > 0.0;
        }
        if (!any_kept) {
            std::uniform_int_distribution<std::size_t> pick(0, out.weights.size() - 1);
            const std::size_t r = pick(rng);
            out.weights[r] = fs.weights[r] > 0.0 ? fs.weights[r] : 1.0;
        }
        const double total = out.weights.sum();
        for (double& w : out.weights) w /= total;
    }
    return out;
}

Vec global_feature(const FeatureSet& fs)
{
    std::vector<double> mean(fs.features.cols(), 0.0);
    for (std::size_t r = 0; r < fs.features.rows(); ++r)
        for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += fs.features(r, k);
    const double n = norm2(mean);
    if (n == 0.0) throw Error("degenerate embedding");
    for (double& x : mean) x /= n;
    return Vec(std::move(mean));
}

}  // namespace uotalign
