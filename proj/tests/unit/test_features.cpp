#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "uotalign/features.hpp"

using namespace uotalign;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / ("uotalign_features_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<unsigned char> slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
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

}  // namespace

TEST_CASE("EMB1 round trip")
{
    const fs::path dir = scratch("emb");
    std::mt19937_64 rng(1);
    std::normal_distribution<float> normal;
    Mat m(49, 32);
    for (double& x : m.flat()) x = static_cast<double>(normal(rng));
    write_embedding_file(dir / "a.emb", m);
    const Mat back = read_embedding_file(dir / "a.emb");
    CHECK(back == m);
    write_embedding_file(dir / "b.emb", back);
    CHECK(slurp(dir / "a.emb") == slurp(dir / "b.emb"));

    const auto bytes = encode_embedding(Mat{{1.0, 2.0}});
    REQUIRE(bytes.size() == 12 + 8);
    CHECK(std::memcmp(bytes.data(), "EMB1", 4) == 0);
    CHECK(bytes[4] == 1);
    CHECK(bytes[8] == 2);
}

TEST_CASE("EMB1 errors")
{
    const fs::path dir = scratch("emb_err");
    std::ofstream(dir / "empty.emb").close();
    CHECK_THROWS_WITH(read_embedding_file(dir / "empty.emb"), doctest::Contains("corrupt file"));

    auto bytes = encode_embedding(Mat{{1.0, 2.0}, {3.0, 4.0}});
    bytes.resize(bytes.size() - 4);
    CHECK_THROWS_WITH(decode_embedding(bytes), doctest::Contains("corrupt file"));

    auto wrong = encode_embedding(Mat{{1.0}});
    wrong[0] = 'X';
    CHECK_THROWS_WITH(decode_embedding(wrong), "not an embedding file");

    auto nan = encode_embedding(Mat{{1.0}});
    const float bad = std::nanf("");
    std::memcpy(nan.data() + 12, &bad, 4);
    CHECK_THROWS_WITH(decode_embedding(nan), doctest::Contains("invalid payload"));
}

TEST_CASE("feature sets are normalized with uniform weights")
{
    const auto fs_ = make_feature_set(Mat{{3.0, 4.0}, {0.0, 2.0}}, "s");
    CHECK(fs_.features(0, 0) == doctest::Approx(0.6));
    CHECK(fs_.weights == Vec{0.5, 0.5});
    CHECK_THROWS(make_feature_set(Mat{{0.0, 0.0}}, "z"));
}

TEST_CASE("augment")
{
    std::mt19937_64 rng(2);
    const auto base = make_feature_set(random_unit_rows(rng, 49, 32), "s", std::string("c"));
    const auto same = augment(base, 0.0, 0.0, 5);
    CHECK(same.features == base.features);
    CHECK(same.weights == base.weights);

    const auto dropped = augment(base, 0.0, 0.5, 7);
    CHECK(dropped.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
    std::size_t zeros = 0;
    for (double w : dropped.weights) zeros += w == 0.0;
    CHECK(zeros > 0);
    CHECK(zeros < 49);
    CHECK(dropped.features.rows() == 49);
    CHECK(dropped.label == base.label);

    const auto single = make_feature_set(random_unit_rows(rng, 1, 8), "one");
    for (std::uint64_t s = 0; s < 50; ++s) CHECK(augment(single, 0.0, 0.9, s).weights[0] == 1.0);

    CHECK(augment(base, 0.3, 0.2, 11).features == augment(base, 0.3, 0.2, 11).features);
    CHECK_THROWS(augment(base, -1.0, 0.0, 1));
    CHECK_THROWS(augment(base, 0.0, 1.0, 1));
}

TEST_CASE("jitter keeps rows close")
{
    std::mt19937_64 rng(3);
    const auto base = make_feature_set(random_unit_rows(rng, 10000, 32), "big");
    const auto jittered = augment(base, 0.1, 0.0, 4);
    double total = 0.0;
    for (std::size_t r = 0; r < 10000; ++r) {
        total += dot(base.features.row(r), jittered.features.row(r));
        CHECK(std::abs(norm2(jittered.features.row(r)) - 1.0) < 1e-12);
    }
    CHECK(total / 10000.0 > 0.9);
}

TEST_CASE("synthetic dataset")
{
    const fs::path a = scratch("synth_a"), b = scratch("synth_b");
    SynthOptions opts;
    opts.per_class = 100;
    opts.tokens = 8;
    const auto m = synth_dataset(opts, a);
    synth_dataset(opts, b);
    CHECK(m.classes.size() == 3);
    CHECK(m.samples.size() == 300);
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        CHECK(slurp(entry.path()) == slurp(b / fs::relative(entry.path(), a)));
    }

    // Nearest-anchor classification of the mean feature.
    const Mat anchors = read_embedding_file(a / "anchors.emb");
    std::size_t correct = 0;
    for (const auto& s : m.samples) {
        const Vec g = global_feature(load_sample(m, s));
        std::size_t best = 0;
        for (std::size_t c = 1; c < 3; ++c)
            if (dot(anchors.row(c), g.span()) > dot(anchors.row(best), g.span())) best = c;
        correct += m.classes[best] == s.label;
    }
    CHECK(static_cast<double>(correct) / 300.0 >= 0.99);

    const auto reread = read_manifest(a / "manifest.json");
    CHECK(reread.classes == m.classes);
    CHECK(reread.samples.size() == m.samples.size());
    CHECK(reread.descriptions.size() == 3);
    CHECK(reread.split("train").size() == 150);
    CHECK(reread.split("test").size() == 150);
    CHECK(reread.sample("class_1_0003").label == "class_1");
    CHECK_THROWS(reread.sample("nope"));
}

TEST_CASE("zero separation carries no class signal")
{
    const fs::path dir = scratch("synth_zero");
    SynthOptions opts;
    opts.separation = 0.0;
    opts.per_class = 100;
    opts.tokens = 8;
    const auto m = synth_dataset(opts, dir);
    const Mat anchors = read_embedding_file(dir / "anchors.emb");
    std::size_t correct = 0;
    for (const auto& s : m.samples) {
        const Vec g = global_feature(load_sample(m, s));
        std::size_t best = 0;
        for (std::size_t c = 1; c < 3; ++c)
            if (dot(anchors.row(c), g.span()) > dot(anchors.row(best), g.span())) best = c;
        correct += m.classes[best] == s.label;
    }
    // Chance is 1/3; 300 draws keep the rate well below the separable case.
    CHECK(static_cast<double>(correct) / 300.0 < 0.5);
}

TEST_CASE("manifest is strict")
{
    const fs::path dir = scratch("manifest");
    std::ofstream(dir / "m1.json") << R"({"classes":["a"],"samples":[],"shots":1,"seed":0,"extra":1})";
    CHECK_THROWS_WITH(read_manifest(dir / "m1.json"), doctest::Contains("unknown key"));
    std::ofstream(dir / "m2.json") << R"({"classes":["a"],"samples":[{"id":"x","class":"b","path":"x.emb","split":"train"}],"shots":1,"seed":0})";
    CHECK_THROWS_WITH(read_manifest(dir / "m2.json"), doctest::Contains("unknown class"));
    CHECK_THROWS(read_manifest(dir / "missing.json"));
}
