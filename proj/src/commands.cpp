#include "uotalign/commands.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "uotalign/checkpoint.hpp"

namespace uotalign {

namespace fs = std::filesystem;
using nlohmann::json;

const char* const kDescriptionSystemPrompt =
    "Given the input text indicating the category name of a certain object, your task involves the following steps:\n"
    "1. Imagine a scene containing the input object.\n"
    "2. Generate 4 descriptions about different key appearance features of the input object from the imagined scene, "
    "with each description having a maximum of 16 words.\n"
    "3. Output a JSON object containing the following key: {\"description\": <list of 4 descriptions>}\n";

namespace {

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("write failed: " + path.string());
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

void prepare_out(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw Error("output directory not writable: " + dir.string());
}

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json vec_json(const Vec& v) { return v.values(); }

Vec parse_marginal(const std::string& spec, std::size_t n, const char* what)
{
    if (spec.empty()) return Vec(n, 1.0 / static_cast<double>(n));
    Mat m = fs::exists(spec) ? read_matrix(spec) : parse_csv_matrix(spec);
    if (m.size() != n)
        throw Error(std::string(what) + " marginal has " + std::to_string(m.size()) + " entries, expected " + std::to_string(n));
    return Vec(std::vector<double>(m.flat().begin(), m.flat().end()));
}

json metrics_json(const Metrics& m)
{
    return {{"accuracy", m.accuracy}, {"per_class", m.per_class}, {"mean_loss", m.mean_loss}, {"count", m.count}};
}

std::string history_csv(const std::vector<EpochRecord>& history)
{
    std::string out = "epoch,loss,accuracy\n";
    for (const auto& h : history)
        out += std::to_string(h.epoch) + "," + format_number(h.loss) + "," + format_number(h.accuracy) + "\n";
    return out;
}

json history_json(const std::vector<EpochRecord>& history)
{
    json out = json::array();
    for (const auto& h : history) out.push_back({{"epoch", h.epoch}, {"loss", h.loss}, {"accuracy", h.accuracy}});
    return out;
}

std::string slug(std::string_view name)
{
    std::string s;
    for (char c : name) s += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
    return s.empty() ? "_" : s;
}

std::string shell_quote(std::string_view s)
{
    std::string q = "'";
    for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return q + "'";
}

std::string replace_all(std::string text, std::string_view key, const std::string& value)
{
    for (std::size_t pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + value.size()))
        text.replace(pos, key.size(), value);
    return text;
}

// stdout of a shell command and its exit status.
std::pair<std::string, int> run_command(const std::string& command)
{
    FILE* pipe = ::popen(command.c_str(), "r");
    if (!pipe) throw Error("cannot run command: " + command);
    std::string output;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) output.append(buf, n);
    const int status = ::pclose(pipe);
    return {output, status};
}

struct TrainingOutputs {
    TrainState state;
    Metrics train;
    std::optional<Metrics> test;
};

TrainingOutputs train_and_measure(const DatasetManifest& manifest, const RunConfig& cfg, std::ostream& err, bool verbose)
{
    TrainingOutputs r{train(manifest, cfg.train, cfg.classifier), {}, {}};
    if (verbose)
        for (const auto& h : r.state.history)
            err << "epoch " << h.epoch << " loss " << format_number(h.loss) << " accuracy " << format_number(h.accuracy) << "\n";
    r.train = evaluate_samples(manifest, few_shot_subset(manifest, cfg.train), r.state, cfg.classifier,
                               cfg.train.train_classes);
    if (!manifest.split("test").empty())
        r.test = evaluate(manifest, "test", r.state, cfg.classifier, cfg.train.train_classes);
    return r;
}

}  // namespace

RunConfig resolve_config(const GlobalOptions& g)
{
    RunConfig cfg = g.config ? read_config(*g.config) : RunConfig{};
    if (g.seed) cfg.train.seed = *g.seed;
    if (g.threads) {
        if (*g.threads < 1) throw Error("--threads must be >= 1");
        cfg.classifier.solver.threads = *g.threads;
    }
    return cfg;
}

std::string format_number(double x)
{
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    std::string s(buf, res.ptr);
    if (s.find_first_of(".e") == std::string::npos) s += ".0";
    return s;
}

std::string matrix_to_csv(const Mat& m)
{
    std::string out;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (j) out += ',';
            out += format_number(m(i, j));
        }
        out += '\n';
    }
    return out;
}

Mat parse_csv_matrix(std::string_view text)
{
    std::vector<double> data;
    std::size_t rows = 0, cols = 0;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        std::size_t count = 0;
        std::istringstream cells(line);
        std::string cell;
        while (std::getline(cells, cell, ',')) {
            const auto b = cell.find_first_not_of(" \t"), e = cell.find_last_not_of(" \t");
            if (b == std::string::npos) throw Error("csv: empty cell on line " + std::to_string(line_no));
            const std::string token = cell.substr(b, e - b + 1);
            double v = 0.0;
            const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
            if (res.ec != std::errc() || res.ptr != token.data() + token.size() || !std::isfinite(v))
                throw Error("csv: invalid number \"" + token + "\" on line " + std::to_string(line_no));
            data.push_back(v);
            ++count;
        }
        if (rows == 0) cols = count;
        if (count != cols) throw Error("csv: ragged row on line " + std::to_string(line_no));
        ++rows;
    }
    if (rows == 0) throw Error("csv: no data");
    return Mat(rows, cols, std::move(data));
}

Mat read_matrix(const fs::path& path)
{
    const std::string text = read_text(path);
    if (text.rfind("EMB1", 0) == 0) return read_embedding_file(path);
    try {
        return parse_csv_matrix(text);
    } catch (const Error& e) {
        throw Error(std::string(e.what()) + " in " + path.string());
    }
}

std::string render_description_prompt(std::string_view class_name)
{
    return std::string("System Prompt:\n") + kDescriptionSystemPrompt + "\nInput: " + std::string(class_name) + "\n";
}

int cmd_solve(const SolveArgs& a, const GlobalOptions& g, std::ostream& err)
{
    const RunConfig cfg = resolve_config(g);
    TransportProblem p;
    p.cost = read_matrix(a.cost);
    p.source = parse_marginal(a.source, p.cost.rows(), "source");
    p.target = parse_marginal(a.target, p.cost.cols(), "target");
    p.lambda = a.lambda;
    p.rho1 = a.rho1;
    p.rho2 = a.rho2;
    const TransportPlan plan = solve_uot(p, cfg.classifier.solver);

    json doc = {{"rows", p.cost.rows()},
                {"cols", p.cost.cols()},
                {"lambda", p.lambda},
                {"rho1", rho_to_json(p.rho1)},
                {"rho2", rho_to_json(p.rho2)},
                {"iterations", plan.iterations},
                {"converged", plan.converged},
                {"support_clamped", plan.support_clamped},
                {"primal_value", plan.primal_value},
                {"dual_value", dual_value(plan.u, plan.v, p)},
                {"total_mass", plan.coupling.sum()},
                {"u", vec_json(plan.u)},
                {"v", vec_json(plan.v)}};
    if (!a.outlier_columns.empty()) {
        doc["outlier_columns"] = a.outlier_columns;
        doc["outlier_mass"] = column_mass_fraction(plan.coupling, a.outlier_columns);
    }
    prepare_out(g.out);
    write_text(g.out / "coupling.csv", matrix_to_csv(plan.coupling));
    write_embedding_file(g.out / "coupling.emb", plan.coupling);
    write_json(g.out / "result.json", doc);
    if (plan.support_clamped) err << "warning: coupling support clamped (entries below 1e-300)\n";
    if (!plan.converged) {
        err << "max iterations (" << plan.iterations << ") reached without convergence\n";
        return kExitNonConvergence;
    }
    return kExitOk;
}

int cmd_compare(const CompareArgs& a, const GlobalOptions& g, std::ostream& err)
{
    const RunConfig cfg = resolve_config(g);
    OutlierSpec spec = a.spec;
    if (g.seed) spec.seed = *g.seed;
    const OutlierComparison r = compare_outliers(spec, cfg.classifier.solver);

    json doc = {{"prompts", spec.prompts},
                {"images", spec.images},
                {"matches", spec.matches},
                {"dim", spec.dim},
                {"noise", spec.noise},
                {"seed", spec.seed},
                {"lambda", spec.lambda},
                {"rho1", rho_to_json(spec.rho1)},
                {"rho2", rho_to_json(spec.rho2)},
                {"outlier_columns", r.instance.outlier_columns},
                {"ot", {{"outlier_mass", r.ot_outlier_mass}, {"total_mass", r.ot.coupling.sum()},
                        {"iterations", r.ot.iterations}, {"converged", r.ot.converged}}},
                {"uot", {{"outlier_mass", r.uot_outlier_mass}, {"total_mass", r.uot.coupling.sum()},
                         {"iterations", r.uot.iterations}, {"converged", r.uot.converged}}},
                {"coupling_max_abs_diff", max_abs_diff(r.ot.coupling, r.uot.coupling)}};
    prepare_out(g.out);
    write_text(g.out / "ot_coupling.csv", matrix_to_csv(r.ot.coupling));
    write_text(g.out / "uot_coupling.csv", matrix_to_csv(r.uot.coupling));
    write_json(g.out / "summary.json", doc);

    if (!r.ot.converged || !r.uot.converged) {
        err << "max iterations reached without convergence\n";
        return kExitNonConvergence;
    }
    if (!r.instance.outlier_columns.empty() && !(r.uot_outlier_mass < r.ot_outlier_mass)) {
        err << "UOT outlier mass " << format_number(r.uot_outlier_mass) << " is not below OT outlier mass "
            << format_number(r.ot_outlier_mass) << "\n";
        return kExitError;
    }
    return kExitOk;
}

int cmd_train(const TrainArgs& a, const GlobalOptions& g, std::ostream& err)
{
    const RunConfig cfg = resolve_config(g);
    const DatasetManifest manifest = read_manifest(a.manifest);
    const TrainingOutputs r = train_and_measure(manifest, cfg, err, g.verbose);

    json metrics = {{"variant", variant_name(cfg.train.variant)}, {"train", metrics_json(r.train)}};
    std::string csv = "split,accuracy,mean_loss,count\n";
    csv += "train," + format_number(r.train.accuracy) + "," + format_number(r.train.mean_loss) + "," +
           std::to_string(r.train.count) + "\n";
    if (r.test) {
        metrics["test"] = metrics_json(*r.test);
        csv += "test," + format_number(r.test->accuracy) + "," + format_number(r.test->mean_loss) + "," +
               std::to_string(r.test->count) + "\n";
    }
    prepare_out(g.out);
    save_checkpoint(g.out / "checkpoint.uck", r.state, cfg);
    write_json(g.out / "config.json", config_to_json(cfg));
    write_json(g.out / "history.json", history_json(r.state.history));
    write_text(g.out / "history.csv", history_csv(r.state.history));
    write_json(g.out / "metrics.json", metrics);
    write_text(g.out / "metrics.csv", csv);
    if (g.verbose) err << "train accuracy " << format_number(r.train.accuracy) << "\n";
    return kExitOk;
}

int cmd_eval(const EvalArgs& a, const GlobalOptions& g, std::ostream& err)
{
    Checkpoint ck = load_checkpoint(a.checkpoint);
    if (g.threads) ck.config.classifier.solver.threads = *g.threads;
    const DatasetManifest manifest = read_manifest(a.manifest);
    const Metrics m = evaluate(manifest, a.split, ck.state, ck.config.classifier, a.classes);

    json doc = metrics_json(m);
    doc["split"] = a.split;
    doc["variant"] = variant_name(ck.state.variant);
    std::string csv = "class,accuracy\n";
    for (const auto& [name, acc] : m.per_class) csv += name + "," + format_number(acc) + "\n";
    csv += "all," + format_number(m.accuracy) + "\n";
    prepare_out(g.out);
    write_json(g.out / ("metrics_" + slug(a.split) + ".json"), doc);
    write_text(g.out / ("metrics_" + slug(a.split) + ".csv"), csv);
    if (g.verbose) err << a.split << " accuracy " << format_number(m.accuracy) << "\n";
    return kExitOk;
}

int cmd_ablate(const TrainArgs& a, const GlobalOptions& g, std::ostream& err)
{
    const RunConfig cfg = resolve_config(g);
    const DatasetManifest manifest = read_manifest(a.manifest);
    const auto rows = run_ablation(manifest, cfg.train, cfg.classifier);

    json table = json::array();
    std::string csv = "variant,ok,train_accuracy,test_accuracy,final_loss,trainable_scalars,error\n";
    bool failed = false;
    for (const auto& row : rows) {
        RunConfig vcfg = cfg;
        vcfg.train.variant = row.variant;
        vcfg.classifier = variant_classifier(cfg.classifier, row.variant);
        json config = config_to_json(vcfg);
        config["solver"].erase("threads");
        table.push_back({{"variant", variant_name(row.variant)},
                         {"ok", row.ok},
                         {"error", row.error},
                         {"train_accuracy", row.train_accuracy},
                         {"test_accuracy", row.test_accuracy},
                         {"final_loss", row.final_loss},
                         {"trainable_scalars", row.trainable_scalars},
                         {"config", config}});
        std::string error = row.error;
        for (char& c : error)
            if (c == ',' || c == '\n') c = ';';
        csv += variant_name(row.variant) + "," + (row.ok ? "true" : "false") + "," + format_number(row.train_accuracy) +
               "," + format_number(row.test_accuracy) + "," + format_number(row.final_loss) + "," +
               std::to_string(row.trainable_scalars) + "," + error + "\n";
        if (!row.ok) {
            failed = true;
            err << "variant " << variant_name(row.variant) << " failed: " << row.error << "\n";
        }
    }
    prepare_out(g.out);
    write_json(g.out / "ablation.json", table);
    write_text(g.out / "ablation.csv", csv);
    return failed ? kExitPartialFailure : kExitOk;
}

int cmd_sweep(const SweepArgs& a, const GlobalOptions& g, std::ostream& err)
{
    const RunConfig cfg = resolve_config(g);
    const DatasetManifest manifest = read_manifest(a.manifest);
    const std::vector<double> rho1 = a.rho1.empty() ? std::vector<double>{cfg.classifier.rho1} : a.rho1;
    const std::vector<double> rho2 = a.rho2.empty() ? std::vector<double>{cfg.classifier.rho2} : a.rho2;

    json table = json::array();
    std::string csv = "rho1,rho2,ok,train_accuracy,test_accuracy,error\n";
    bool failed = false;
    for (double r1 : rho1)
        for (double r2 : rho2) {
            RunConfig run = cfg;
            run.classifier.rho1 = r1;
            run.classifier.rho2 = r2;
            json row = {{"rho1", rho_to_json(r1)}, {"rho2", rho_to_json(r2)}};
            std::string error;
            double train_acc = 0.0, test_acc = 0.0;
            try {
                run.classifier.validate();
                const TrainingOutputs r = train_and_measure(manifest, run, err, g.verbose);
                train_acc = r.train.accuracy;
                test_acc = r.test ? r.test->accuracy : 0.0;
            } catch (const std::exception& e) {
                error = e.what();
                failed = true;
                err << "rho1=" << format_number(r1) << " rho2=" << format_number(r2) << " failed: " << error << "\n";
            }
            row["ok"] = error.empty();
            row["error"] = error;
            row["train_accuracy"] = train_acc;
            row["test_accuracy"] = test_acc;
            table.push_back(row);
            for (char& c : error)
                if (c == ',' || c == '\n') c = ';';
            csv += format_number(r1) + "," + format_number(r2) + "," + (error.empty() ? "true" : "false") + "," +
                   format_number(train_acc) + "," + format_number(test_acc) + "," + error + "\n";
        }
    prepare_out(g.out);
    write_json(g.out / "sweep.json", table);
    write_text(g.out / "sweep.csv", csv);
    return failed ? kExitPartialFailure : kExitOk;
}

int cmd_heatmap(const HeatmapArgs& a, const GlobalOptions& g, std::ostream& err)
{
    Checkpoint ck = load_checkpoint(a.checkpoint);
    if (g.threads) ck.config.classifier.solver.threads = *g.threads;
    const DatasetManifest manifest = read_manifest(a.manifest);
    const FeatureSet sample = load_sample(manifest, manifest.sample(a.sample));
    const ClassifierConfig ccfg = variant_classifier(ck.config.classifier, ck.state.variant);
    const AlignmentScore s = score(sample, a.class_name, ck.state.bank, ck.state.encoder, ccfg);

    auto argmax_columns = [](const Mat& w) {
        std::vector<std::size_t> cols;
        for (std::size_t i = 0; i < w.rows(); ++i) {
            const auto row = w.row(i);
            cols.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
        }
        return cols;
    };
    json doc = {{"sample", a.sample}, {"class", a.class_name}, {"d_total", s.d_total}};
    prepare_out(g.out);
    bool converged = true;
    if (ccfg.gamma_cs > 0.0) {
        write_text(g.out / "heatmap_cs.csv", matrix_to_csv(s.plan_cs.coupling));
        doc["cs"] = {{"distance", s.d_cs}, {"argmax_columns", argmax_columns(s.plan_cs.coupling)},
                     {"converged", s.plan_cs.converged}};
        converged = converged && s.plan_cs.converged;
    }
    if (ccfg.gamma_ds > 0.0) {
        write_text(g.out / "heatmap_ds.csv", matrix_to_csv(s.plan_ds.coupling));
        doc["ds"] = {{"distance", s.d_ds}, {"argmax_columns", argmax_columns(s.plan_ds.coupling)},
                     {"converged", s.plan_ds.converged}};
        converged = converged && s.plan_ds.converged;
    }
    write_json(g.out / "heatmap.json", doc);
    if (!converged) {
        err << "max iterations reached without convergence\n";
        return kExitNonConvergence;
    }
    return kExitOk;
}

int cmd_gen_descriptions(const GenDescriptionsArgs& a, const GlobalOptions& g, std::ostream& err)
{
    if (a.classes.empty()) throw Error("no classes given");
    for (const auto& c : a.classes)
        if (split_words(c).empty()) throw Error("class name without words: \"" + c + "\"");
    prepare_out(g.out / "prompts");
    if (!a.template_command.empty()) prepare_out(g.out / "descriptions");

    json report = json::array();
    bool failed = false;
    for (const auto& name : a.classes) {
        const fs::path prompt_file = g.out / "prompts" / (slug(name) + ".txt");
        write_text(prompt_file, render_description_prompt(name));
        json entry = {{"class", name}, {"prompt_file", fs::relative(prompt_file, g.out).generic_string()}};
        if (a.template_command.empty()) {
            entry["status"] = "rendered";
            report.push_back(entry);
            continue;
        }
        std::string command = replace_all(a.template_command, "{prompt_file}", shell_quote(prompt_file.string()));
        command = replace_all(command, "{class}", shell_quote(name));
        try {
            const auto [output, status] = run_command(command);
            if (status != 0) throw Error("command exited with status " + std::to_string(status));
            DescriptionFile file = parse_descriptions_json(output, name);
            const fs::path out_file = g.out / "descriptions" / (slug(name) + ".json");
            write_text(out_file, descriptions_to_json(file));
            entry["status"] = "ok";
            entry["description_file"] = fs::relative(out_file, g.out).generic_string();
            entry["warnings"] = file.warnings;
            for (const auto& w : file.warnings) err << "class " << name << ": " << w << "\n";
        } catch (const std::exception& e) {
            failed = true;
            entry["status"] = "failed";
            entry["error"] = e.what();
            err << "class " << name << " failed: " << e.what() << "\n";
        }
        report.push_back(entry);
    }
    write_json(g.out / "gen_report.json", report);
    return failed ? kExitPartialFailure : kExitOk;
}

int cmd_synth(const SynthArgs& a, const GlobalOptions& g, std::ostream& err)
{
    SynthOptions opts = a.options;
    if (g.seed) opts.seed = *g.seed;
    const DatasetManifest m = synth_dataset(opts, g.out);
    if (g.verbose) err << "wrote " << m.samples.size() << " samples to " << g.out.string() << "\n";
    return kExitOk;
}

namespace {

double parse_rho_text(const std::string& s)
{
    if (s == "inf" || s == "INF" || s == "infinity") return kInfRho;
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw Error("invalid rho \"" + s + "\"");
    return v;
}

std::vector<double> parse_rho_list(const std::vector<std::string>& items)
{
    std::vector<double> out;
    for (const auto& s : items) out.push_back(parse_rho_text(s));
    return out;
}

}  // namespace

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Entropic OT/UOT solvers and dual-context prompt alignment"};
    app.require_subcommand(1);
    GlobalOptions g;
    std::string config_path, out_dir = "out";
    std::uint64_t seed = 0;
    int threads = 1;
    auto* config_opt = app.add_option("--config", config_path, "Strict JSON run configuration");
    auto* seed_opt = app.add_option("--seed", seed, "Override the master seed");
    app.add_option("--out", out_dir, "Output directory");
    auto* threads_opt = app.add_option("--threads", threads, "Worker threads for batched solves");
    app.add_flag("--verbose,-v", g.verbose, "Progress on stderr");

    SolveArgs solve;
    std::string rho1_text = "inf", rho2_text = "inf";
    auto* solve_cmd = app.add_subcommand("solve", "Solve one OT/UOT problem");
    solve_cmd->add_option("--cost", solve.cost, "Cost matrix (EMB1 or CSV)")->required();
    solve_cmd->add_option("--source", solve.source, "Source marginal: comma list or file (default uniform)");
    solve_cmd->add_option("--target", solve.target, "Target marginal: comma list or file (default uniform)");
    solve_cmd->add_option("--lambda", solve.lambda, "Entropic regularization");
    solve_cmd->add_option("--rho1", rho1_text, "Source KL weight or inf");
    solve_cmd->add_option("--rho2", rho2_text, "Target KL weight or inf");
    solve_cmd->add_option("--outlier-columns", solve.outlier_columns, "Columns whose mass is reported")->delimiter(',');

    CompareArgs compare;
    std::string cmp_rho1 = "inf", cmp_rho2 = "0.04";
    auto* compare_cmd = app.add_subcommand("compare", "Balanced OT against UOT on a prompt/outlier instance");
    compare_cmd->add_option("--prompts", compare.spec.prompts);
    compare_cmd->add_option("--images", compare.spec.images);
    compare_cmd->add_option("--matches", compare.spec.matches);
    compare_cmd->add_option("--dim", compare.spec.dim);
    compare_cmd->add_option("--noise", compare.spec.noise);
    compare_cmd->add_option("--lambda", compare.spec.lambda);
    compare_cmd->add_option("--rho1", cmp_rho1);
    compare_cmd->add_option("--rho2", cmp_rho2);

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Few-shot prompt training");
    train_cmd->add_option("--manifest", train_args.manifest)->required();

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
    eval_cmd->add_option("--checkpoint", eval.checkpoint)->required();
    eval_cmd->add_option("--manifest", eval.manifest)->required();
    eval_cmd->add_option("--split", eval.split);
    eval_cmd->add_option("--classes", eval.classes, "Restrict to these classes")->delimiter(',');

    TrainArgs ablate;
    auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate every ablation variant");
    ablate_cmd->add_option("--manifest", ablate.manifest)->required();

    SweepArgs sweep;
    std::vector<std::string> sweep_rho1, sweep_rho2;
    auto* sweep_cmd = app.add_subcommand("sweep", "Train and evaluate over a rho grid");
    sweep_cmd->add_option("--manifest", sweep.manifest)->required();
    sweep_cmd->add_option("--rho1", sweep_rho1, "Comma list, inf allowed")->delimiter(',');
    sweep_cmd->add_option("--rho2", sweep_rho2, "Comma list, inf allowed")->delimiter(',');

    HeatmapArgs heatmap;
    auto* heatmap_cmd = app.add_subcommand("heatmap", "Per-prompt coupling of one sample against one class");
    heatmap_cmd->add_option("--checkpoint", heatmap.checkpoint)->required();
    heatmap_cmd->add_option("--manifest", heatmap.manifest)->required();
    heatmap_cmd->add_option("--sample", heatmap.sample)->required();
    heatmap_cmd->add_option("--class", heatmap.class_name)->required();

    GenDescriptionsArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-descriptions", "Render LLM prompts and collect class descriptions");
    gen_cmd->add_option("--classes", gen.classes)->delimiter(',')->required();
    gen_cmd->add_option("--template", gen.template_command, "Command with {prompt_file} and {class} placeholders");

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic separable dataset");
    synth_cmd->add_option("--classes", synth.options.num_classes);
    synth_cmd->add_option("--per-class", synth.options.per_class);
    synth_cmd->add_option("--tokens", synth.options.tokens);
    synth_cmd->add_option("--dim", synth.options.dim);
    synth_cmd->add_option("--separation", synth.options.separation);
    synth_cmd->add_option("--shots", synth.options.shots);
    synth_cmd->add_option("--train-fraction", synth.options.train_fraction);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitError;
    }

    try {
        if (*config_opt) g.config = config_path;
        if (*seed_opt) g.seed = seed;
        if (*threads_opt) g.threads = threads;
        g.out = out_dir;
        if (*solve_cmd) {
            solve.rho1 = parse_rho_text(rho1_text);
            solve.rho2 = parse_rho_text(rho2_text);
            return cmd_solve(solve, g, err);
        }
        if (*compare_cmd) {
            compare.spec.rho1 = parse_rho_text(cmp_rho1);
            compare.spec.rho2 = parse_rho_text(cmp_rho2);
            return cmd_compare(compare, g, err);
        }
        if (*train_cmd) return cmd_train(train_args, g, err);
        if (*eval_cmd) return cmd_eval(eval, g, err);
        if (*ablate_cmd) return cmd_ablate(ablate, g, err);
        if (*sweep_cmd) {
            sweep.rho1 = parse_rho_list(sweep_rho1);
            sweep.rho2 = parse_rho_list(sweep_rho2);
            return cmd_sweep(sweep, g, err);
        }
        if (*heatmap_cmd) return cmd_heatmap(heatmap, g, err);
        if (*gen_cmd) return cmd_gen_descriptions(gen, g, err);
        if (*synth_cmd) return cmd_synth(synth, g, err);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitError;
    }
    return kExitError;
}

}  // namespace uotalign
