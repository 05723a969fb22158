#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "uotalign/numerics.hpp"

namespace uotalign {

// EMB1: "EMB1" | u32 rows | u32 cols | rows*cols f32, all little-endian, row-major.
Mat read_embedding_file(const std::filesystem::path& path);
void write_embedding_file(const std::filesystem::path& path, const Mat& m);
std::vector<unsigned char> encode_embedding(const Mat& m);
Mat decode_embedding(std::span<const unsigned char> bytes);

// Local visual tokens of one sample plus their masses.
struct FeatureSet {
    Mat features;  // M x d, unit rows
    Vec weights;   // M, sums to 1
    std::optional<std::string> label;
    std::string sample_id;

    std::size_t tokens() const { return features.rows(); }
};

// Unit-normalizes rows and attaches uniform weights 1/M.
FeatureSet make_feature_set(Mat features, std::string sample_id, std::optional<std::string> label = std::nullopt);

struct SampleEntry {
    std::string id;
    std::string label;
    std::string path;  // relative paths resolve against the manifest directory
    std::string split;
};

struct DatasetManifest {
    std::vector<std::string> classes;
    std::vector<SampleEntry> samples;
    int shots = 0;
    std::uint64_t seed = 0;
    // Optional description file per class, parallel to classes.
    std::vector<std::string> descriptions;
    std::filesystem::path base_dir;

    std::vector<const SampleEntry*> split(std::string_view name) const;
    std::filesystem::path resolve(const std::string& path) const;
    const SampleEntry& sample(std::string_view id) const;
    bool has_class(std::string_view name) const;
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
FeatureSet load_sample(const DatasetManifest& manifest, const SampleEntry& entry);

struct SynthOptions {
    std::size_t num_classes = 3;
    std::size_t per_class = 20;
    std::size_t tokens = 49;
    std::size_t dim = 32;
    double separation = 10.0;
    std::uint64_t seed = 1;
    int shots = 4;
    // Fraction of each class assigned to the train split; the rest is test.
    double train_fraction = 0.5;
};

// Writes anchors.emb, one EMB1 file per sample, one description file per class
// and manifest.json under out_dir. Pure function of its options.
DatasetManifest synth_dataset(const SynthOptions& opts, const std::filesystem::path& out_dir);

// Gaussian row jitter of total scale jitter_sigma (re-normalized) and
// independent weight dropout with renormalization; at least one row keeps its
// weight.
FeatureSet augment(const FeatureSet& fs, double jitter_sigma, double drop_prob, std::uint64_t rng_seed);

// Normalized mean of the rows.
Vec global_feature(const FeatureSet& fs);

}  // namespace uotalign
