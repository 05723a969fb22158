#include "uotalign/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace uotalign {

using nlohmann::json;

namespace {

class Section {
public:
    Section(const json& doc, std::string name) : name_(std::move(name))
    {
        if (!doc.is_object()) throw Error("config: section \"" + name_ + "\" must be an object");
        doc_ = &doc;
    }

    template <typename T>
    void read(const char* key, T& dst)
    {
        seen_.insert(key);
        const auto it = doc_->find(key);
        if (it == doc_->end()) return;
        try {
            dst = it->template get<T>();
        } catch (const json::exception&) {
            throw Error("config: " + name_ + "." + key + " has the wrong type");
        }
    }

    void read_rho(const char* key, double& dst)
    {
        seen_.insert(key);
        const auto it = doc_->find(key);
        if (it != doc_->end()) dst = rho_from_json(*it, name_ + "." + key);
    }

    void read_size(const char* key, std::size_t& dst)
    {
        seen_.insert(key);
        const auto it = doc_->find(key);
        if (it == doc_->end()) return;
        if (!it->is_number_integer() || it->get<long long>() < 0)
            throw Error("config: " + name_ + "." + key + " must be a non-negative integer");
        dst = it->get<std::size_t>();
    }

    const json* find(const char* key)
    {
        seen_.insert(key);
        const auto it = doc_->find(key);
        return it == doc_->end() ? nullptr : &*it;
    }

    void finish() const
    {
        for (const auto& [key, value] : doc_->items())
            if (!seen_.count(key)) throw Error("config: unknown key \"" + name_ + "." + key + "\"");
    }

private:
    const json* doc_ = nullptr;
    std::string name_;
    std::set<std::string> seen_;
};

}  // namespace

json rho_to_json(double rho)
{
    if (std::isinf(rho)) return "inf";
    return rho;
}

double rho_from_json(const json& value, std::string_view key)
{
    if (value.is_string()) {
        const auto s = value.get<std::string>();
        if (s == "inf" || s == "INF" || s == "infinity") return kInfRho;
        throw Error("config: " + std::string(key) + " must be a number or \"inf\"");
    }
    if (!value.is_number()) throw Error("config: " + std::string(key) + " must be a number or \"inf\"");
    return value.get<double>();
}

std::string distance_name(DistanceKind kind)
{
    return kind == DistanceKind::regularized_value ? "regularized_value" : "transported_cost";
}

DistanceKind parse_distance(std::string_view name)
{
    if (name == "regularized_value") return DistanceKind::regularized_value;
    if (name == "transported_cost") return DistanceKind::transported_cost;
    throw Error("config: unknown distance \"" + std::string(name) + "\"");
}

RunConfig parse_config(const json& doc)
{
    if (!doc.is_object()) throw Error("config: top level must be an object");
    RunConfig cfg;
    for (const auto& [key, value] : doc.items())
        if (key != "train" && key != "classifier" && key != "solver" && key != "model")
            throw Error("config: unknown key \"" + key + "\"");

    if (doc.contains("train")) {
        Section s(doc.at("train"), "train");
        auto& t = cfg.train;
        s.read("learning_rate", t.learning_rate);
        s.read_size("batch_size", t.batch_size);
        s.read("epochs", t.epochs);
        s.read("shots", t.shots);
        s.read("seed", t.seed);
        if (const json* v = s.find("variant")) {
            if (!v->is_string()) throw Error("config: train.variant must be text");
            t.variant = parse_variant(v->get<std::string>());
        }
        s.read("jitter_sigma", t.jitter_sigma);
        s.read("drop_prob", t.drop_prob);
        s.read("adam_beta1", t.adam_beta1);
        s.read("adam_beta2", t.adam_beta2);
        s.read("adam_epsilon", t.adam_epsilon);
        s.read("train_classes", t.train_classes);
        s.finish();
    }
    if (doc.contains("model")) {
        Section s(doc.at("model"), "model");
        auto& m = cfg.train.model;
        s.read_size("token_dim", m.token_dim);
        s.read_size("embed_dim", m.embed_dim);
        s.read_size("attention_dim", m.attention_dim);
        s.read_size("prompt_length", m.prompt_length);
        s.read_size("shared_prompts", m.shared_prompts);
        s.read_size("class_prompts", m.class_prompts);
        s.read("token_seed", m.token_seed);
        s.read("encoder_seed", m.encoder_seed);
        s.read("train_class_tokens", m.train_class_tokens);
        s.finish();
    }
    if (doc.contains("classifier")) {
        Section s(doc.at("classifier"), "classifier");
        auto& c = cfg.classifier;
        s.read("tau", c.tau);
        s.read("gamma_cs", c.gamma_cs);
        s.read("gamma_ds", c.gamma_ds);
        s.read("lambda", c.lambda);
        s.read_rho("rho1", c.rho1);
        s.read_rho("rho2", c.rho2);
        s.read("use_uot", c.use_uot);
        if (const json* v = s.find("distance")) {
            if (!v->is_string()) throw Error("config: classifier.distance must be text");
            c.distance = parse_distance(v->get<std::string>());
        }
        s.finish();
    }
    if (doc.contains("solver")) {
        Section s(doc.at("solver"), "solver");
        auto& v = cfg.classifier.solver;
        s.read("max_iterations", v.max_iterations);
        s.read("dual_tolerance", v.dual_tolerance);
        s.read("record_dual_trace", v.record_dual_trace);
        s.read("threads", v.threads);
        s.finish();
        if (v.max_iterations < 1) throw Error("config: solver.max_iterations must be >= 1");
        if (!(v.dual_tolerance > 0.0)) throw Error("config: solver.dual_tolerance must be > 0");
        if (v.threads < 1) throw Error("config: solver.threads must be >= 1");
    }
    cfg.train.validate();
    cfg.classifier.validate();
    return cfg;
}

RunConfig parse_config_text(std::string_view text)
{
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(std::string("config: malformed JSON: ") + e.what());
    }
    return parse_config(doc);
}

RunConfig read_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw Error("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config_text(ss.str());
    } catch (const Error& e) {
        throw Error(std::string(e.what()) + " in " + path.string());
    }
}

json config_to_json(const RunConfig& cfg)
{
    const auto& t = cfg.train;
    const auto& m = t.model;
    const auto& c = cfg.classifier;
    const auto& s = c.solver;
    json doc;
    doc["train"] = {{"learning_rate", t.learning_rate}, {"batch_size", t.batch_size},
                    {"epochs", t.epochs},               {"shots", t.shots},
                    {"seed", t.seed},                   {"variant", variant_name(t.variant)},
                    {"jitter_sigma", t.jitter_sigma},   {"drop_prob", t.drop_prob},
                    {"adam_beta1", t.adam_beta1},       {"adam_beta2", t.adam_beta2},
                    {"adam_epsilon", t.adam_epsilon},   {"train_classes", t.train_classes}};
    doc["model"] = {{"token_dim", m.token_dim},       {"embed_dim", m.embed_dim},
                    {"attention_dim", m.attention_dim}, {"prompt_length", m.prompt_length},
                    {"shared_prompts", m.shared_prompts}, {"class_prompts", m.class_prompts},
                    {"token_seed", m.token_seed},     {"encoder_seed", m.encoder_seed},
                    {"train_class_tokens", m.train_class_tokens}};
    doc["classifier"] = {{"tau", c.tau},           {"gamma_cs", c.gamma_cs},     {"gamma_ds", c.gamma_ds},
                         {"lambda", c.lambda},     {"rho1", rho_to_json(c.rho1)}, {"rho2", rho_to_json(c.rho2)},
                         {"use_uot", c.use_uot},   {"distance", distance_name(c.distance)}};
    doc["solver"] = {{"max_iterations", s.max_iterations},
                     {"dual_tolerance", s.dual_tolerance},
                     {"record_dual_trace", s.record_dual_trace},
                     {"threads", s.threads}};
    return doc;
}

}  // namespace uotalign
