#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "uotalign/config.hpp"
#include "uotalign/outlier_demo.hpp"

namespace uotalign {

enum ExitCode : int { kExitOk = 0, kExitError = 1, kExitNonConvergence = 2, kExitPartialFailure = 3 };

struct GlobalOptions {
    std::optional<std::filesystem::path> config;
    std::optional<std::uint64_t> seed;
    std::filesystem::path out = "out";
    std::optional<int> threads;
    bool verbose = false;
};

// Config file (or defaults) with the --seed and --threads overrides applied.
RunConfig resolve_config(const GlobalOptions& g);

// Shortest round-trip decimal; integral values keep a trailing ".0".
std::string format_number(double x);
std::string matrix_to_csv(const Mat& m);
Mat parse_csv_matrix(std::string_view text);
// EMB1 when the file carries the magic, CSV otherwise.
Mat read_matrix(const std::filesystem::path& path);

// The LLM system prompt, verbatim.
extern const char* const kDescriptionSystemPrompt;
std::string render_description_prompt(std::string_view class_name);

struct SolveArgs {
    std::filesystem::path cost;
    // Comma-separated values or a CSV file; empty means uniform 1/n.
    std::string source;
    std::string target;
    double lambda = 0.1;
    double rho1 = kInfRho;
    double rho2 = kInfRho;
    std::vector<std::size_t> outlier_columns;
};

struct CompareArgs {
    OutlierSpec spec;
};

struct TrainArgs {
    std::filesystem::path manifest;
};

struct EvalArgs {
    std::filesystem::path checkpoint;
    std::filesystem::path manifest;
    std::string split = "test";
    std::vector<std::string> classes;
};

struct HeatmapArgs {
    std::filesystem::path checkpoint;
    std::filesystem::path manifest;
    std::string sample;
    std::string class_name;
};

struct SweepArgs {
    std::filesystem::path manifest;
    std::vector<double> rho1;
    std::vector<double> rho2;
};

struct GenDescriptionsArgs {
    std::vector<std::string> classes;
    // Shell command with {prompt_file} and {class} placeholders; its stdout
    // must be a description JSON object. Empty renders prompts only.
    std::string template_command;
};

struct SynthArgs {
    SynthOptions options;
};

// Each command reports diagnostics on err and returns an ExitCode.
int cmd_solve(const SolveArgs& a, const GlobalOptions& g, std::ostream& err);
int cmd_compare(const CompareArgs& a, const GlobalOptions& g, std::ostream& err);
int cmd_train(const TrainArgs& a, const GlobalOptions& g, std::ostream& err);
int cmd_eval(const EvalArgs& a, const GlobalOptions& g, std::ostream& err);
int cmd_ablate(const TrainArgs& a, const GlobalOptions& g, std::ostream& err);
int cmd_sweep(const SweepArgs& a, const GlobalOptions& g, std::ostream& err);
int cmd_heatmap(const HeatmapArgs& a, const GlobalOptions& g, std::ostream& err);
int cmd_gen_descriptions(const GenDescriptionsArgs& a, const GlobalOptions& g, std::ostream& err);
int cmd_synth(const SynthArgs& a, const GlobalOptions& g, std::ostream& err);

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace uotalign
