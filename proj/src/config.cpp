#include "hidlr/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "hidlr/errors.hpp"

namespace hidlr {

using nlohmann::ordered_json;

std::string to_string(Method m) {
    switch (m) {
        case Method::hidlr: return "hidlr";
        case Method::hiulr: return "hiulr";
        case Method::constant: return "constant";
        case Method::linear: return "linear";
        case Method::cosine: return "cosine";
        case Method::grid: return "grid";
    }
    return "?";
}

namespace {

std::optional<Method> parse_method(std::string_view s) {
    for (Method m : {Method::hidlr, Method::hiulr, Method::constant, Method::linear, Method::cosine, Method::grid})
        if (to_string(m) == s) return m;
    return std::nullopt;
}

// Strict reader over one JSON object: every key must be consumed.
class Reader {
public:
    Reader(const ordered_json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) throw ParseError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    bool has(const std::string& key) const { return obj_.contains(key); }

    const ordered_json* take(const std::string& key) {
        seen_.insert(key);
        auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

    std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    void number(const std::string& key, double& out) {
        if (auto* v = take(key)) {
            if (!v->is_number()) throw ParseError(key_path(key), "expected a number");
            out = v->get<double>();
        }
    }

    template <typename Int>
    void count(const std::string& key, Int& out) {
        if (auto* v = take(key)) {
            if (!v->is_number_integer() || v->get<long long>() < 0) {
                throw ParseError(key_path(key), "expected a non-negative integer");
            }
            out = static_cast<Int>(v->get<unsigned long long>());
        }
    }

    void boolean(const std::string& key, bool& out) {
        if (auto* v = take(key)) {
            if (!v->is_boolean()) throw ParseError(key_path(key), "expected true or false");
            out = v->get<bool>();
        }
    }

    void string(const std::string& key, std::string& out) {
        if (auto* v = take(key)) {
            if (!v->is_string()) throw ParseError(key_path(key), "expected a string");
            out = v->get<std::string>();
        }
    }

    // A number or an array of numbers.
    void numbers(const std::string& key, Vec& out) {
        if (auto* v = take(key)) {
            if (v->is_number()) {
                out = {v->get<double>()};
                return;
            }
            if (!v->is_array()) throw ParseError(key_path(key), "expected a number or an array of numbers");
            out.clear();
            for (const auto& e : *v) {
                if (!e.is_number()) throw ParseError(key_path(key), "array entries must be numbers");
                out.push_back(e.get<double>());
            }
        }
    }

    void counts(const std::string& key, std::vector<std::size_t>& out) {
        if (auto* v = take(key)) {
            if (!v->is_array()) throw ParseError(key_path(key), "expected an array of integers");
            out.clear();
            for (const auto& e : *v) {
                if (!e.is_number_integer() || e.get<long long>() <= 0) {
                    throw ParseError(key_path(key), "array entries must be positive integers");
                }
                out.push_back(e.get<std::size_t>());
            }
        }
    }

    void finish() const {
        for (const auto& [key, value] : obj_.items()) {
            if (!seen_.count(key)) throw ParseError(key_path(key), "unknown key '" + key + "'");
        }
    }

private:
    const ordered_json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

void deep_merge(ordered_json& base, const ordered_json& top) {
    for (const auto& [key, value] : top.items()) {
        if (value.is_object() && base.contains(key) && base[key].is_object()) {
            deep_merge(base[key], value);
        } else {
            base[key] = value;
        }
    }
}

void apply_override(ordered_json& doc, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw ParseError(spec, "override must look like key=value");
    const std::string path = spec.substr(0, eq);
    const std::string text = spec.substr(eq + 1);
    ordered_json value;
    try {
        value = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error&) {
        value = text;
    }
    ordered_json* node = &doc;
    std::stringstream ss(path);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        ordered_json& child = (*node)[parts[i]];
        if (child.is_string() && parts[i] == "problem") child = ordered_json{{"id", child.get<std::string>()}};
        if (child.is_null()) child = ordered_json::object();
        if (!child.is_object()) throw ParseError(path, "'" + parts[i] + "' is not an object");
        node = &child;
    }
    (*node)[parts.back()] = value;
}

ProblemSpec read_problem(const ordered_json& v) {
    ProblemSpec p;
    if (v.is_string()) {
        p.id = v.get<std::string>();
        return p;
    }
    Reader r(v, "problem");
    r.string("id", p.id);
    r.counts("hidden", p.hidden);
    r.string("csv", p.csv);
    r.string("target", p.target);
    r.count("dim", p.dim);
    r.count("rank", p.rank);
    r.count("n_tasks", p.n_tasks);
    r.count("n_train", p.n_train);
    r.count("n_test", p.n_test);
    r.finish();
    return p;
}

const std::set<std::string>& known_problems() {
    static const std::set<std::string> ids{"ellipse",   "beale-rosenbrock",   "lora-synthetic", "nam-synthetic",
                                           "california-housing", "moe", "multitask"};
    return ids;
}

}  // namespace

std::vector<std::string> preset_names() {
    return {"ellipse", "beale-rosenbrock", "lora-synthetic", "nam-synthetic", "california-housing", "moe", "multitask"};
}

ordered_json preset_json(std::string_view name) {
    auto toy = [](const char* id) {
        return ordered_json{{"problem", {{"id", id}}},
                            {"grouping", "default"},
                            {"method", "hidlr"},
                            {"optimizer", {{"kind", "sgd"}}},
                            {"hidlr", {{"phi", 1}, {"gamma", 0.9}, {"eta0", 1e-3}}},
                            {"iterations", 100}};
    };
    if (name == "ellipse") return toy("ellipse");
    if (name == "beale-rosenbrock") return toy("beale-rosenbrock");
    if (name == "lora-synthetic") {
        return {{"problem", {{"id", "lora-synthetic"}, {"dim", 64}, {"rank", 4}, {"n_train", 1000}, {"n_test", 200}}},
                {"method", "hidlr"},
                {"optimizer", {{"kind", "sgd"}}},
                {"hidlr", {{"phi", 10}, {"gamma", 0.9}, {"eta0", 1e-3}}},
                {"epochs", 100},
                {"batch_size", 100}};
    }
    if (name == "nam-synthetic") {
        return {{"problem", {{"id", "nam-synthetic"}, {"hidden", {32, 32}}}},
                {"method", "hidlr"},
                {"optimizer", {{"kind", "sgd"}}},
                {"hidlr", {{"phi", 2}, {"gamma", 0.9}, {"eta0", 1e-3}}},
                {"lr", 1e-3},
                {"epochs", 100},
                {"batch_size", 256}};
    }
    if (name == "california-housing") {
        return {{"problem", {{"id", "california-housing"}, {"hidden", {32, 32}}, {"csv", "data/california_housing.csv"},
                             {"target", "MedHouseVal"}}},
                {"method", "hidlr"},
                {"optimizer", {{"kind", "adam"}}},
                {"hidlr", {{"phi", 8}, {"gamma", 0.9}, {"eta0", 1e-4}}},
                {"lr", 1e-4},
                {"epochs", 200},
                {"batch_size", 256}};
    }
    if (name == "moe") {
        return {{"problem", {{"id", "moe"}}},
                {"method", "hidlr"},
                {"optimizer", {{"kind", "adam"}}},
                {"hidlr", {{"phi", 4}, {"gamma", 0.9}, {"eta0", 1e-3}}},
                {"lr", 1e-3},
                {"epochs", 100},
                {"batch_size", 128}};
    }
    if (name == "multitask") {
        return {{"problem", {{"id", "multitask"}, {"n_tasks", 40}}},
                {"method", "hidlr"},
                {"optimizer", {{"kind", "adamw"}, {"weight_decay", 0.01}}},
                {"hidlr", {{"phi", 10}, {"gamma", 0.9}, {"eta0", 1e-3}}},
                {"lr", 1e-3},
                {"epochs", 20},
                {"batch_size", 500}};
    }
    throw ParseError("preset", "unknown preset '" + std::string(name) + "'");
}

ExperimentConfig config_from_json(const ordered_json& input, const std::vector<std::string>& overrides) {
    if (!input.is_object()) throw ParseError("<root>", "config must be an object");
    ordered_json doc = input;
    for (const auto& o : overrides) apply_override(doc, o);

    ordered_json merged = ordered_json::object();
    if (doc.contains("preset")) {
        if (!doc["preset"].is_string()) throw ParseError("preset", "expected a string");
        merged = preset_json(doc["preset"].get<std::string>());
    }
    ordered_json user = doc;
    user.erase("preset");
    if (user.contains("problem") && user["problem"].is_string()) {
        user["problem"] = ordered_json{{"id", user["problem"].get<std::string>()}};
        if (merged.contains("problem") && merged["problem"].value("id", "") != user["problem"]["id"]) {
            merged.erase("problem");
        }
    }
    deep_merge(merged, user);

    ExperimentConfig cfg;
    Reader r(merged, "");
    if (auto* p = r.take("problem")) cfg.problem = read_problem(*p);
    if (!known_problems().count(cfg.problem.id)) {
        throw ParseError("problem.id", "unknown problem '" + cfg.problem.id + "'");
    }
    r.string("grouping", cfg.grouping);
    std::string method = to_string(cfg.method);
    r.string("method", method);
    if (auto m = parse_method(method)) cfg.method = *m;
    else throw ParseError("method", "unknown method '" + method + "'");

    if (auto* o = r.take("optimizer")) {
        Reader ro(*o, "optimizer");
        std::string kind = to_string(cfg.optimizer);
        ro.string("kind", kind);
        if (auto k = parse_optimizer_kind(kind)) cfg.optimizer = *k;
        else throw ParseError("optimizer.kind", "unknown optimizer '" + kind + "'");
        ro.number("beta1", cfg.hyper.beta1);
        ro.number("beta2", cfg.hyper.beta2);
        ro.number("eps", cfg.hyper.eps);
        ro.number("momentum", cfg.hyper.momentum);
        ro.number("weight_decay", cfg.hyper.weight_decay);
        ro.boolean("decay_in_direction", cfg.hyper.decay_in_direction);
        ro.finish();
    }

    if (auto* h = r.take("hidlr")) {
        Reader rh(*h, "hidlr");
        rh.count("phi", cfg.hidlr.phi);
        rh.number("gamma", cfg.hidlr.gamma);
        rh.number("r2_threshold", cfg.hidlr.r2_threshold);
        if (rh.has("eta0") && (*h)["eta0"].is_number()) {
            rh.number("eta0", cfg.eta0_default);
        } else {
            rh.numbers("eta0", cfg.hidlr.eta0);
        }
        rh.number("eta_min", cfg.hidlr.eta_min);
        rh.number("eta_max", cfg.hidlr.eta_max);
        rh.number("probe_floor", cfg.hidlr.probe_floor);
        std::string gating = cfg.hidlr.gating == GatingMode::global ? "global" : "per-group";
        rh.string("gating", gating);
        if (gating == "global") cfg.hidlr.gating = GatingMode::global;
        else if (gating == "per-group") cfg.hidlr.gating = GatingMode::per_group;
        else throw ParseError("hidlr.gating", "expected 'global' or 'per-group'");
        rh.boolean("fresh_probe_batch", cfg.hidlr.fresh_probe_batch);
        rh.finish();
    }

    r.numbers("lr", cfg.lr);
    r.numbers("grid", cfg.grid);
    r.count("iterations", cfg.iterations);
    r.count("epochs", cfg.epochs);
    r.count("batch_size", cfg.batch_size);
    if (!r.has("seed")) throw ValidationError("seed is required (set \"seed\" or pass --seed)");
    r.count("seed", cfg.seed);
    r.string("out", cfg.out);
    if (auto* d = r.take("diag")) {
        Reader rd(*d, "diag");
        rd.count("iteration", cfg.diag.iteration);
        rd.numbers("multipliers", cfg.diag.multipliers);
        rd.finish();
    }
    r.finish();

    // Invariants that do not need the problem instance.
    if (cfg.hidlr.phi < 1) throw ValidationError("hidlr.phi must be >= 1");
    if (!(cfg.hidlr.gamma >= 0.0 && cfg.hidlr.gamma < 1.0)) throw ValidationError("hidlr.gamma must lie in [0, 1)");
    if (!(cfg.hidlr.r2_threshold > 0.0 && cfg.hidlr.r2_threshold <= 1.0)) {
        throw ValidationError("hidlr.r2_threshold must lie in (0, 1]");
    }
    if (!(cfg.hidlr.eta_min > 0.0 && cfg.hidlr.eta_min < cfg.hidlr.eta_max)) {
        throw ValidationError("hidlr: need 0 < eta_min < eta_max");
    }
    if (!(cfg.eta0_default > 0.0)) throw ValidationError("hidlr.eta0 must be positive");
    if (cfg.lr.empty()) throw ValidationError("lr must not be empty");
    for (double v : cfg.lr)
        if (!(v >= 0.0)) throw ValidationError("lr entries must be >= 0");
    for (double v : cfg.grid)
        if (!(v > 0.0)) throw ValidationError("grid entries must be positive");
    if (cfg.iterations == 0 && cfg.epochs == 0) throw ValidationError("need iterations > 0 or epochs > 0");
    if (cfg.problem.hidden.empty()) throw ValidationError("problem.hidden must be nonempty");
    if (cfg.problem.id == "california-housing" && cfg.problem.csv.empty()) {
        throw ValidationError("problem.csv is required for california-housing");
    }
    return cfg;
}

ExperimentConfig parse_config_text(std::string_view text, const std::vector<std::string>& overrides) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(text.begin(), text.end(), nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("<file>", e.what());
    }
    return config_from_json(doc, overrides);
}

ExperimentConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), overrides);
}

ordered_json to_json(const ExperimentConfig& cfg) {
    ordered_json j;
    j["problem"] = {{"id", cfg.problem.id},         {"hidden", cfg.problem.hidden}, {"csv", cfg.problem.csv},
                    {"target", cfg.problem.target}, {"dim", cfg.problem.dim},       {"rank", cfg.problem.rank},
                    {"n_tasks", cfg.problem.n_tasks}, {"n_train", cfg.problem.n_train},
                    {"n_test", cfg.problem.n_test}};
    j["grouping"] = cfg.grouping;
    j["method"] = to_string(cfg.method);
    j["optimizer"] = {{"kind", to_string(cfg.optimizer)},
                      {"beta1", cfg.hyper.beta1},
                      {"beta2", cfg.hyper.beta2},
                      {"eps", cfg.hyper.eps},
                      {"momentum", cfg.hyper.momentum},
                      {"weight_decay", cfg.hyper.weight_decay},
                      {"decay_in_direction", cfg.hyper.decay_in_direction}};
    ordered_json eta0 = cfg.hidlr.eta0.empty() ? ordered_json(cfg.eta0_default) : ordered_json(cfg.hidlr.eta0);
    j["hidlr"] = {{"phi", cfg.hidlr.phi},
                  {"gamma", cfg.hidlr.gamma},
                  {"r2_threshold", cfg.hidlr.r2_threshold},
                  {"eta0", eta0},
                  {"eta_min", cfg.hidlr.eta_min},
                  {"eta_max", cfg.hidlr.eta_max},
                  {"probe_floor", cfg.hidlr.probe_floor},
                  {"gating", cfg.hidlr.gating == GatingMode::global ? "global" : "per-group"},
                  {"fresh_probe_batch", cfg.hidlr.fresh_probe_batch}};
    j["lr"] = cfg.lr;
    j["grid"] = cfg.grid;
    j["iterations"] = cfg.iterations;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["seed"] = cfg.seed;
    j["out"] = cfg.out;
    j["diag"] = {{"iteration", cfg.diag.iteration}, {"multipliers", cfg.diag.multipliers}};
    return j;
}

}  // namespace hidlr
