#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / ("uotalign_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run(const std::string& args)
{
    const std::string cmd = std::string("\"") + UOTALIGN_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::vector<double>> read_csv(const fs::path& p)
{
    std::vector<std::vector<double>> rows;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(row);
    }
    return rows;
}

// Shared synthetic dataset and a trained checkpoint.
struct Trained {
    fs::path dir;
    Trained()
    {
        dir = scratch("trained");
        REQUIRE(run("--out " + (dir / "data").string() + " synth --per-class 10") == 0);
        std::ofstream(dir / "cfg.json") << R"({"train":{"epochs":5,"batch_size":4,"learning_rate":0.01}})";
        REQUIRE(run("--config " + (dir / "cfg.json").string() + " --out " + (dir / "run").string() +
                    " train --manifest " + (dir / "data" / "manifest.json").string()) == 0);
    }
};

}  // namespace

TEST_CASE("solve a 1x1 problem")
{
    const fs::path dir = scratch("solve");
    std::ofstream(dir / "c.csv") << "0.3\n";
    CHECK(run("--out " + (dir / "o").string() + " solve --cost " + (dir / "c.csv").string()) == 0);
    CHECK(slurp(dir / "o" / "coupling.csv") == "1.0\n");
    const json r = json::parse(slurp(dir / "o" / "result.json"));
    CHECK(r["converged"] == true);
}

TEST_CASE("solve exit codes")
{
    const fs::path dir = scratch("solve_codes");
    std::ofstream(dir / "c.csv") << "0.0,1.0\n1.0,0.0\n";
    CHECK(run("--out " + (dir / "a").string() + " solve --cost " + (dir / "c.csv").string() +
              " --lambda 0.1 --rho1 1 --rho2 inf") == 0);
    CHECK(run("--out " + (dir / "b").string() + " solve --cost " + (dir / "c.csv").string() + " --lambda 0") == 1);
    CHECK(run("--out " + (dir / "c").string() + " solve --cost " + (dir / "missing.csv").string()) == 1);
    CHECK(run("--out " + (dir / "d").string() + " solve --cost " + (dir / "c.csv").string() +
              " --source 0.5,0.3,0.2") == 1);
    // Pathological lambda: either converges or reports max iterations, never crashes.
    const int tiny = run("--out " + (dir / "e").string() + " solve --cost " + (dir / "c.csv").string() +
                         " --lambda 1e-9");
    CHECK((tiny == 0 || tiny == 2));
    CHECK(run("bogus") == 1);
    CHECK(run("") == 1);
}

TEST_CASE("compare writes both couplings")
{
    const fs::path dir = scratch("compare");
    CHECK(run("--out " + dir.string() + " compare") == 0);
    const json s = json::parse(slurp(dir / "summary.json"));
    CHECK(s["ot"]["outlier_mass"].get<double>() > 0.5);
    CHECK(s["uot"]["outlier_mass"].get<double>() < 0.05);
    CHECK(read_csv(dir / "uot_coupling.csv").size() == 4);
}

TEST_CASE("train with a missing manifest leaves no outputs")
{
    const fs::path dir = scratch("missing");
    CHECK(run("--out " + (dir / "run").string() + " train --manifest " + (dir / "nope.json").string()) == 1);
    CHECK_FALSE(fs::exists(dir / "run"));
}

TEST_CASE("train, eval and heatmap")
{
    Trained t;
    const fs::path run_dir = t.dir / "run";
    for (const char* f : {"checkpoint.uck", "config.json", "history.json", "history.csv", "metrics.json", "metrics.csv"})
        CHECK(fs::exists(run_dir / f));
    const json metrics = json::parse(slurp(run_dir / "metrics.json"));
    REQUIRE(metrics.contains("test"));

    const std::string manifest = (t.dir / "data" / "manifest.json").string();
    CHECK(run("--out " + (t.dir / "eval").string() + " eval --checkpoint " + (run_dir / "checkpoint.uck").string() +
              " --manifest " + manifest) == 0);
    const json ev = json::parse(slurp(t.dir / "eval" / "metrics_test.json"));
    CHECK(ev["accuracy"] == metrics["test"]["accuracy"]);
    CHECK(run("--out " + (t.dir / "eval2").string() + " eval --checkpoint " + (run_dir / "checkpoint.uck").string() +
              " --manifest " + manifest + " --split val") == 1);

    CHECK(run("--out " + (t.dir / "heat").string() + " heatmap --checkpoint " + (run_dir / "checkpoint.uck").string() +
              " --manifest " + manifest + " --sample class_0_0000 --class class_0") == 0);
    const auto cs = read_csv(t.dir / "heat" / "heatmap_cs.csv");
    REQUIRE(cs.size() == 4);
    CHECK(cs[0].size() == 49);
    for (const auto& row : cs) {
        double sum = 0.0;
        for (double x : row) sum += x;
        CHECK(sum == doctest::Approx(0.25).epsilon(1e-6));
    }
    const json h = json::parse(slurp(t.dir / "heat" / "heatmap.json"));
    CHECK(h["cs"]["argmax_columns"].size() == 4);
}

TEST_CASE("ablate writes six rows")
{
    const fs::path dir = scratch("ablate");
    REQUIRE(run("--out " + (dir / "data").string() + " synth --per-class 8 --tokens 8") == 0);
    std::ofstream(dir / "cfg.json") << R"({"train":{"epochs":2,"batch_size":4}})";
    CHECK(run("--config " + (dir / "cfg.json").string() + " --out " + (dir / "abl").string() +
              " ablate --manifest " + (dir / "data" / "manifest.json").string()) == 0);
    std::ifstream in(dir / "abl" / "ablation.csv");
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == 7);
    CHECK(json::parse(slurp(dir / "abl" / "ablation.json")).size() == 6);
}

TEST_CASE("config errors")
{
    const fs::path dir = scratch("config");
    std::ofstream(dir / "bad.json") << R"({"train":{"epoch":3}})";
    std::ofstream(dir / "c.csv") << "0.3\n";
    CHECK(run("--config " + (dir / "bad.json").string() + " --out " + (dir / "o").string() + " solve --cost " +
              (dir / "c.csv").string()) == 1);
}

TEST_CASE("gen-descriptions")
{
    const fs::path dir = scratch("gen");
    CHECK(run("--out " + (dir / "offline").string() + " gen-descriptions --classes \"golden retriever,cat\"") == 0);
    const std::string prompt = slurp(dir / "offline" / "prompts" / "golden_retriever.txt");
    CHECK(prompt.find("System Prompt:") == 0);
    CHECK(prompt.find("Input: golden retriever") != std::string::npos);

    std::ofstream(dir / "good.sh") << "#!/bin/sh\necho '{\"class_name\": \"'\"$2\"'\", \"description\": [\"a\", \"b\"]}'\n";
    CHECK(run("--out " + (dir / "good").string() + " gen-descriptions --classes cat --template \"sh " +
              (dir / "good.sh").string() + " {prompt_file} {class}\"") == 0);
    const json d = json::parse(slurp(dir / "good" / "descriptions" / "cat.json"));
    CHECK(d["description"].size() == 2);

    CHECK(run("--out " + (dir / "bad").string() + " gen-descriptions --classes cat --template \"echo not-json\"") == 3);
}
