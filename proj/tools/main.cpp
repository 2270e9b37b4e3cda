#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hidlr/config.hpp"
#include "hidlr/controller.hpp"
#include "hidlr/errors.hpp"
#include "hidlr/harness.hpp"

namespace {

constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("config", c.config, "config file, or the name of a preset")->required();
    cmd->add_option("--seed", c.seed, "run seed (overrides the file)");
    cmd->add_option("--out", c.out, "output directory");
    cmd->add_option("--override", c.overrides, "key=value with a dotted key path; repeatable");
}

hidlr::ExperimentConfig load(const Common& c, std::optional<hidlr::Method> force = std::nullopt) {
    std::vector<std::string> overrides = c.overrides;
    if (c.seed) overrides.push_back("seed=" + std::to_string(*c.seed));
    if (!c.out.empty()) overrides.push_back("out=" + nlohmann::json(c.out).dump());
    if (force) overrides.push_back("method=" + hidlr::to_string(*force));
    if (!std::filesystem::exists(c.config)) {
        for (const auto& name : hidlr::preset_names()) {
            if (name == c.config) return hidlr::config_from_json({{"preset", name}}, overrides);
        }
        throw hidlr::ParseError("config", "'" + c.config + "' is neither a file nor a preset name");
    }
    return hidlr::parse_config(c.config, overrides);
}

std::filesystem::path out_dir(const hidlr::ExperimentConfig& cfg, const char* kind) {
    if (!cfg.out.empty()) return cfg.out;
    return std::filesystem::path("runs") /
           (cfg.problem.id + "-" + kind + "-s" + std::to_string(cfg.seed));
}

void print_summary(const hidlr::RunRecord& r, const std::filesystem::path& dir) {
    const auto& s = r.summary;
    std::printf("iterations %zu  final train loss %.6g", s.iterations, s.final_train_loss);
    if (s.final_test_loss) std::printf("  test loss %.6g", *s.final_test_loss);
    if (s.final_test_accuracy) std::printf("  test acc %.4f", *s.final_test_accuracy);
    std::printf("  loss calls %zu", s.loss_calls);
    if (s.grid_best_lr) std::printf("  best lr %.3g", *s.grid_best_lr);
    std::printf("\nwrote %s\n", dir.string().c_str());
}

int run(const Common& c, std::optional<hidlr::Method> force) {
    const auto cfg = load(c, force);
    const auto record = hidlr::run_experiment(cfg);
    const auto dir = out_dir(cfg, hidlr::to_string(cfg.method).c_str());
    hidlr::emit_metrics(record, dir, &cfg);
    print_summary(record, dir);
    return 0;
}

int diag(const Common& c) {
    const auto cfg = load(c);
    const auto table = hidlr::taylor_at_iteration(cfg);
    const auto dir = out_dir(cfg, "diag");
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "taylor.csv");
    if (!out) throw hidlr::IoError("cannot write " + (dir / "taylor.csv").string());
    out.precision(17);
    out << "group,xi,measured,predicted\n";
    for (const auto& row : table.rows) {
        out << row.group << ',' << row.xi << ',' << row.measured << ',' << row.predicted << '\n';
    }
    std::printf("iteration %zu  pooled R2 %.6f\n", cfg.diag.iteration, table.pooled_r2);
    for (std::size_t k = 0; k < table.a.size(); ++k) {
        std::printf("  group %zu  eta %.4g  a %.4g  b %.4g  R2 %.4f\n", k, table.eta[k], table.a[k], table.b[k],
                    table.r2[k]);
    }
    std::printf("wrote %s\n", (dir / "taylor.csv").string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"per-group learning rates from loss probes"};
    app.require_subcommand(1);

    Common run_opts, grid_opts, diag_opts;
    auto* run_cmd = app.add_subcommand("run", "train one configured experiment");
    add_common(run_cmd, run_opts);
    auto* grid_cmd = app.add_subcommand("grid", "grid-search a constant uniform learning rate");
    add_common(grid_cmd, grid_opts);
    auto* diag_cmd = app.add_subcommand("diag", "second-order Taylor diagnostics at cfg.diag.iteration");
    add_common(diag_cmd, diag_opts);
    auto* list_cmd = app.add_subcommand("list-problems", "print the problem ids");
    std::size_t t = 0, k = 0, phi = 0;
    auto* budget_cmd = app.add_subcommand("budget", "forward passes of a Hi-DLR run: T + 4K ceil(T/phi)");
    budget_cmd->add_option("T", t, "iterations")->required();
    budget_cmd->add_option("K", k, "groups")->required();
    budget_cmd->add_option("phi", phi, "refresh period")->required()->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kConfigError;
    }

    try {
        if (*run_cmd) return run(run_opts, std::nullopt);
        if (*grid_cmd) return run(grid_opts, hidlr::Method::grid);
        if (*diag_cmd) return diag(diag_opts);
        if (*list_cmd) {
            for (const auto& id : hidlr::problem_ids()) std::printf("%s\n", id.c_str());
            return 0;
        }
        if (*budget_cmd) {
            std::printf("%zu\n", hidlr::forward_pass_budget(t, k, phi));
            return 0;
        }
    } catch (const hidlr::ParseError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfigError;
    } catch (const hidlr::ValidationError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfigError;
    } catch (const hidlr::UnknownStrategy& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfigError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kRuntimeError;
    }
    return 0;
}
