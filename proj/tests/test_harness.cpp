#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hidlr/config.hpp"
#include "hidlr/errors.hpp"
#include "hidlr/harness.hpp"
#include "hidlr/problems.hpp"

using namespace hidlr;
using nlohmann::json;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("hidlr_test_" + name);
    std::filesystem::remove_all(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<json> jsonl(const std::string& text) {
    std::vector<json> rows;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) rows.push_back(json::parse(line));
    return rows;
}

std::string csv_path() { return std::string(HIDLR_SOURCE_DIR) + "/data/california_housing.csv"; }

ExperimentConfig small_nam(Method m, std::uint64_t seed = 1) {
    ExperimentConfig cfg = config_from_json({{"preset", "nam-synthetic"}, {"seed", seed}, {"epochs", 1}});
    cfg.method = m;
    return cfg;
}

void check_same_record(const RunRecord& a, const RunRecord& b) {
    CHECK(metrics_jsonl(a) == metrics_jsonl(b));
    CHECK(probes_jsonl(a) == probes_jsonl(b));
    CHECK(summary_json(a) == summary_json(b));
    CHECK(a.final_params == b.final_params);
}

}  // namespace

TEST_CASE("minimal config is fully defaulted") {
    const ExperimentConfig cfg = parse_config_text(R"({"problem": "ellipse", "method": "hidlr", "seed": 1})");
    CHECK(cfg.problem.id == "ellipse");
    CHECK(cfg.method == Method::hidlr);
    CHECK(cfg.hidlr.phi == 1);
    CHECK(cfg.hidlr.gamma == 0.9);
    CHECK(cfg.eta0_default == 1e-3);
    CHECK(cfg.hidlr.eta0.empty());
    CHECK(cfg.seed == 1);
    CHECK(cfg.optimizer == OptimizerKind::sgd);
    CHECK(cfg.grouping == "default");
    const RunRecord r = run_experiment(cfg);
    REQUIRE_FALSE(r.refreshes.empty());
    CHECK(r.refreshes.front().eta_before == Vec{1e-3, 1e-3});
}

TEST_CASE("unknown keys name the key path") {
    try {
        parse_config_text(R"({"problem": "ellipse", "seed": 1, "lerning_rate": 0.1})");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.where() == "lerning_rate");
    }
    try {
        parse_config_text(R"({"problem": "ellipse", "seed": 1, "hidlr": {"gama": 0.5}})");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.where() == "hidlr.gama");
    }
    CHECK_THROWS_AS(parse_config_text(R"({"problem": "ellipse", "seed": 1, "phi": "x"})"), ParseError);
    CHECK_THROWS_AS(parse_config_text(R"({"problem": "ellipse", "seed": 1, "hidlr": {"phi": "x"}})"), ParseError);
    CHECK_THROWS_AS(parse_config_text(R"({"problem": "nosuch", "seed": 1})"), ParseError);
    CHECK_THROWS_AS(parse_config_text(R"({"problem": "ellipse", "seed": 1, "method": "newton"})"), ParseError);
    CHECK_THROWS_AS(parse_config_text("{not json"), ParseError);
}

TEST_CASE("missing seed and violated invariants") {
    CHECK_THROWS_AS(parse_config_text(R"({"problem": "ellipse"})"), ValidationError);
    CHECK_THROWS_AS(parse_config_text(R"({"problem": "ellipse", "seed": 1, "hidlr": {"gamma": 1.5}})"),
                    ValidationError);
    CHECK_THROWS_AS(parse_config_text(R"({"problem": "ellipse", "seed": 1, "hidlr": {"phi": 0}})"),
                    ValidationError);
    ExperimentConfig big = config_from_json({{"preset", "nam-synthetic"}, {"seed", 1}, {"batch_size", 100000}});
    CHECK_THROWS_AS(run_experiment(big), ValidationError);
}

TEST_CASE("nam preset") {
    const ExperimentConfig cfg = parse_config_text(R"({"preset": "nam-synthetic", "seed": 3})");
    CHECK(cfg.problem.id == "nam-synthetic");
    CHECK(cfg.hidlr.phi == 2);
    CHECK(cfg.batch_size == 256);
    CHECK(cfg.epochs == 100);
    CHECK(cfg.optimizer == OptimizerKind::sgd);
    CHECK(cfg.problem.hidden == std::vector<std::size_t>{32, 32});
}

TEST_CASE("every preset parses") {
    for (const auto& name : preset_names()) {
        CAPTURE(name);
        const ExperimentConfig cfg = config_from_json({{"preset", name}, {"seed", 0}});
        CHECK(cfg.problem.id == name);
        const ExperimentConfig again = config_from_json(json::parse(to_json(cfg).dump()));
        CHECK(to_json(again).dump() == to_json(cfg).dump());
    }
}

TEST_CASE("overrides") {
    const ExperimentConfig cfg = config_from_json({{"preset", "moe"}, {"seed", 2}},
                                                  {"hidlr.phi=7", "lr=[0.001, 0.005]", "method=constant",
                                                   "optimizer.kind=sgd", "problem.n_train=300"});
    CHECK(cfg.hidlr.phi == 7);
    CHECK(cfg.lr == Vec{0.001, 0.005});
    CHECK(cfg.method == Method::constant);
    CHECK(cfg.optimizer == OptimizerKind::sgd);
    CHECK(cfg.problem.n_train == 300);
    CHECK_THROWS_AS(config_from_json({{"preset", "moe"}, {"seed", 2}}, {"novalue"}), ParseError);
}

TEST_CASE("config files on disk") {
    const auto dir = scratch_dir("cfg");
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "c.json") << "// ellipse\n{\"problem\": \"ellipse\", \"seed\": 4, \"iterations\": 5}\n";
    const ExperimentConfig cfg = parse_config(dir / "c.json");
    CHECK(cfg.iterations == 5);
    CHECK_THROWS_AS(parse_config(dir / "missing.json"), IoError);
    for (const auto& entry : std::filesystem::directory_iterator(std::string(HIDLR_SOURCE_DIR) + "/configs")) {
        CAPTURE(entry.path().string());
        CHECK_NOTHROW(parse_config(entry.path()));
    }
}

TEST_CASE("same seed, same metrics") {
    for (const char* preset : {"ellipse", "beale-rosenbrock"}) {
        const ExperimentConfig cfg = config_from_json({{"preset", preset}, {"seed", 5}});
        check_same_record(run_experiment(cfg), run_experiment(cfg));
    }
    const ExperimentConfig nam = small_nam(Method::hidlr, 5);
    check_same_record(run_experiment(nam), run_experiment(nam));
    ExperimentConfig other = nam;
    other.seed = 6;
    CHECK(metrics_jsonl(run_experiment(other)) != metrics_jsonl(run_experiment(nam)));
}

TEST_CASE("hiulr is hidlr with a single group") {
    for (std::uint64_t seed : {1u, 2u}) {
        ExperimentConfig a = config_from_json({{"preset", "ellipse"}, {"seed", seed}, {"method", "hiulr"}});
        ExperimentConfig b = config_from_json({{"preset", "ellipse"}, {"seed", seed}, {"grouping", "single"}});
        check_same_record(run_experiment(a), run_experiment(b));
    }
    ExperimentConfig a = small_nam(Method::hiulr);
    ExperimentConfig b = small_nam(Method::hidlr);
    b.grouping = "single";
    check_same_record(run_experiment(a), run_experiment(b));
}

TEST_CASE("metrics and summary contents") {
    const ExperimentConfig cfg = small_nam(Method::hidlr);
    const RunRecord r = run_experiment(cfg);
    const std::size_t k = 11;
    CHECK(r.summary.groups == k);
    CHECK(r.summary.iterations == r.steps.size());
    CHECK(r.summary.iterations == (2400 + 255) / 256);

    const auto rows = jsonl(metrics_jsonl(r));
    REQUIRE(rows.size() == r.steps.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i]["eta"].size() == k);
        CHECK(rows[i]["iteration"].get<std::size_t>() == i);
        if (i > 0) CHECK(rows[i]["loss_calls"].get<std::size_t>() > rows[i - 1]["loss_calls"].get<std::size_t>());
    }
    CHECK(rows.back()["test_loss"].is_number());

    const json s = json::parse(summary_json(r));
    CHECK(s["final_train_loss"].is_number());
    CHECK(s["final_test_loss"].is_number());
    CHECK(s["loss_calls"].get<std::size_t>() == r.summary.loss_calls);
    CHECK(s["loss_calls"].get<std::size_t>() == forward_pass_budget(r.summary.iterations, k, 2));
    CHECK(s["expected_loss_calls"].get<std::size_t>() == r.summary.loss_calls);
    CHECK(s["eval_loss_calls"].get<std::size_t>() > 0);

    const auto probes = jsonl(probes_jsonl(r));
    CHECK(probes.size() == 4 * k * r.refreshes.size());
    CHECK(r.refreshes.size() == (r.summary.iterations + 1) / 2);
    for (std::size_t j = 0; j < 4 * k; ++j) CHECK(probes[j]["t"].get<std::size_t>() == 0);
}

TEST_CASE("emit writes every file") {
    const ExperimentConfig cfg = config_from_json({{"preset", "ellipse"}, {"seed", 1}});
    const RunRecord r = run_experiment(cfg);
    const auto dir = scratch_dir("emit");
    emit_metrics(r, dir, &cfg);
    for (const char* f : {"metrics.jsonl", "probes.jsonl", "summary.json", "config.json"})
        CHECK(std::filesystem::exists(dir / f));
    CHECK(slurp(dir / "metrics.jsonl") == metrics_jsonl(r));
    CHECK(jsonl(slurp(dir / "metrics.jsonl")).size() == 100);
    CHECK(jsonl(slurp(dir / "probes.jsonl")).size() == 100 * 8);
    const ExperimentConfig back = parse_config(dir / "config.json");
    CHECK(to_json(back).dump() == to_json(cfg).dump());
    CHECK_THROWS_AS(emit_metrics(r, "/proc/forbidden/dir"), IoError);
}

TEST_CASE("fresh probe batch is counted in the audit") {
    ExperimentConfig cfg = small_nam(Method::hidlr);
    cfg.hidlr.fresh_probe_batch = true;
    const RunRecord r = run_experiment(cfg);
    const std::size_t t = r.summary.iterations;
    CHECK(r.summary.loss_calls == forward_pass_budget(t, 11, 2) + (t + 1) / 2);
}

TEST_CASE("scheduled and grid methods") {
    ExperimentConfig cfg = config_from_json({{"preset", "ellipse"}, {"seed", 1}, {"method", "constant"}, {"lr", {0.004}}});
    const RunRecord c = run_experiment(cfg);
    double x = 50.0, y = 1.0;
    for (int t = 0; t < 100; ++t) {
        x -= 0.004 * 2 * x;
        y -= 0.004 * 200 * y;
    }
    CHECK(c.summary.final_train_loss == doctest::Approx(x * x + 100 * y * y).epsilon(1e-12));
    CHECK(c.steps.back().eta == Vec{0.004, 0.004});

    cfg.lr = {0.004, 0.001};
    const RunRecord dlr = run_experiment(cfg);
    CHECK(dlr.steps.front().eta == Vec{0.004, 0.001});

    cfg.method = Method::linear;
    cfg.lr = {0.004};
    const RunRecord lin = run_experiment(cfg);
    CHECK(lin.steps[99].eta[0] == doctest::Approx(0.004 / 100));
    cfg.method = Method::cosine;
    CHECK(run_experiment(cfg).steps[50].eta[0] == doctest::Approx(0.002));

    cfg.lr = {0.1, 0.2, 0.3};
    CHECK_THROWS_AS(run_experiment(cfg), ValidationError);
}

TEST_CASE("grid on the toy functions picks the smallest loss after 100 iterations") {
    const ExperimentConfig cfg = config_from_json({{"preset", "ellipse"}, {"seed", 1}, {"method", "grid"}});
    const RunRecord r = run_experiment(cfg);
    REQUIRE(r.summary.grid.size() == 12);
    REQUIRE(r.summary.grid_best_lr.has_value());
    const GridResult ref = grid_search(*ellipse_problem(), OptimizerKind::sgd, default_toy_grid(), 100);
    CHECK(*r.summary.grid_best_lr == ref.best_lr);
    double best = INFINITY;
    for (const auto& e : r.summary.grid) best = std::min(best, e.final_train_loss);
    CHECK(best == ref.best_loss);
    CHECK(r.summary.final_train_loss == ref.best_loss);
    for (std::size_t i = 0; i < 12; ++i) CHECK(r.summary.grid[i].final_train_loss == ref.losses[i]);
}

TEST_CASE("taylor table on the ellipse") {
    const auto e = ellipse_problem();
    const Vec w{50, 1};
    const Batch one = Batch::all(Split::train, 1);
    const Vec g = e->grad(w, one);
    const TaylorTable t = taylor_diagnostics(*e, w, g, e->default_layout(), Vec{1e-3, 1e-3}, {Vec{0.25}}, one);
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0].group == 0);
    CHECK(t.rows[0].measured == doctest::Approx(-1875.0).epsilon(1e-12));
    CHECK(t.rows[0].predicted == doctest::Approx(-1875.0).epsilon(1e-10));
    CHECK(t.a[0] == doctest::Approx(2e4).epsilon(1e-10));
    CHECK(t.b[0] == doctest::Approx(1e4).epsilon(1e-10));
    CHECK(std::abs(t.rows[0].measured - t.rows[0].predicted) < 1e-10 * 1875.0);
    CHECK_THROWS_AS(taylor_diagnostics(*e, w, g, e->default_layout(), Vec{1e-3, 1e-3}, {Vec{}}, one),
                    ValidationError);
}

TEST_CASE("taylor table is exact on quadratics") {
    Rng rng(3);
    Mat q(4, 4);
    for (std::size_t i = 0; i < 4; ++i) q(i, i) = 1.0 + static_cast<double>(i);
    q(0, 3) = q(3, 0) = 0.5;
    const GroupLayout layout = GroupLayout::from_sizes({"a", "b"}, {2, 2});
    const Vec w = rng_normal(rng, 4);
    const auto p = quadratic_problem(q, rng_normal(rng, 4), layout, w);
    const Batch one = Batch::all(Split::train, 1);
    const Vec dir = rng_normal(rng, 4);
    const TaylorTable t = taylor_diagnostics(*p, w, dir, layout, Vec{0.01, 0.02},
                                             {Vec{-0.3, -0.1, 0.05, 0.2, 0.5}, Vec{-1.0, 1.0}}, one);
    REQUIRE(t.rows.size() == 7);
    for (const auto& row : t.rows) CHECK(std::abs(row.measured - row.predicted) < 1e-10);
    CHECK(t.pooled_r2 == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("taylor table at the standard probes reproduces the fit") {
    Rng rng(4);
    const auto p = beale_rosenbrock_problem();
    const Vec w{2.5, 1.3};
    const Batch one = Batch::all(Split::train, 1);
    const Vec g = p->grad(w, one);
    const Vec eta{0.01, 0.002};
    std::vector<Vec> grid;
    for (double e : eta) grid.push_back({-2 * e, -e, e, 2 * e});
    const TaylorTable t = taylor_diagnostics(*p, w, g, p->default_layout(), eta, grid, one);
    const ProbeMatrix pm = build_probe_matrix(eta);
    const Vec dl = evaluate_probes(*p, w, g, p->default_layout(), pm, one, p->loss(w, one));
    const QuadraticFit f = fit_diag_quadratic(pm, dl);
    REQUIRE(t.rows.size() == 8);
    for (std::size_t j = 0; j < 8; ++j) {
        CHECK(t.rows[j].measured == dl[j]);
        CHECK(t.rows[j].predicted == doctest::Approx(f.predicted[j]).epsilon(1e-12));
    }
    CHECK(t.pooled_r2 == doctest::Approx(f.pooled_r2).epsilon(1e-12));
}

TEST_CASE("taylor diagnostics at an iteration") {
    ExperimentConfig cfg = small_nam(Method::hidlr);
    cfg.diag.iteration = 3;
    const TaylorTable t = taylor_at_iteration(cfg);
    CHECK(t.rows.size() == 11 * cfg.diag.multipliers.size());
    CHECK(t.eta.size() == 11);
}

TEST_CASE("problem zoo ids") {
    const auto ids = problem_ids();
    for (const char* id : {"ellipse", "beale-rosenbrock", "lora-synthetic", "nam-synthetic", "california-housing",
                           "moe", "multitask"})
        CHECK(std::find(ids.begin(), ids.end(), id) != ids.end());
    ProblemSpec spec;
    spec.id = "nosuch";
    CHECK_THROWS_AS(make_problem(spec, 0), ValidationError);
    spec.id = "california-housing";
    spec.csv = csv_path();
    const auto p = make_problem(spec, 0);
    CHECK(p->default_layout().groups() == 9);
    CHECK(p->sample_count(Split::train) + p->sample_count(Split::test) == 20640);
}

TEST_CASE("errors carry run context") {
    ExperimentConfig cfg = config_from_json({{"preset", "california-housing"}, {"seed", 1}});
    cfg.problem.csv = "/nonexistent.csv";
    CHECK_THROWS_AS(run_experiment(cfg), IoError);
}

namespace {

int cli(const std::string& args) {
    const std::string cmd = std::string(HIDLR_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("cli exit codes") {
    const auto dir = scratch_dir("cli");
    std::filesystem::create_directories(dir);
    const std::string out = (dir / "run").string();
    CHECK(cli("list-problems") == 0);
    CHECK(cli("budget 100 2 10") == 0);
    CHECK(cli("run ellipse --seed 1 --out " + out) == 0);
    CHECK(std::filesystem::exists(dir / "run" / "metrics.jsonl"));
    CHECK(cli("grid ellipse --seed 1 --out " + (dir / "grid").string()) == 0);
    CHECK(cli("diag ellipse --seed 1 --override diag.iteration=2 --out " + (dir / "diag").string()) == 0);
    CHECK(std::filesystem::exists(dir / "diag" / "taylor.csv"));
    CHECK(cli("run ellipse --seed 1 --override lerning_rate=1 --out " + out) == 1);
    CHECK(cli("run ellipse --override hidlr.gamma=2 --seed 1 --out " + out) == 1);
    CHECK(cli("run nosuchconfig.json --seed 1") == 1);
    CHECK(cli("frobnicate") == 1);
    CHECK(cli("run california-housing --seed 1 --override problem.csv=/nonexistent.csv --out " + out) == 2);
}
