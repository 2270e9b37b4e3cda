#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hidlr/config.hpp"
#include "hidlr/controller.hpp"
#include "hidlr/problem.hpp"

namespace hidlr {

// Independent RNG streams derived from the run seed.
inline constexpr std::uint64_t kDataStream = 1;
inline constexpr std::uint64_t kInitStream = 2;
inline constexpr std::uint64_t kBatchStream = 3;
inline constexpr std::uint64_t kProbeStream = 4;

std::vector<std::string> problem_ids();

// Builds the problem named by `spec`; data is drawn from the data stream of
// `seed`. california-housing reads spec.csv.
std::unique_ptr<LossProblem> make_problem(const ProblemSpec& spec, std::uint64_t seed);

struct StepRow {
    std::size_t iteration = 0;
    std::size_t epoch = 0;
    double train_loss = 0.0;  // mini-batch L0 before the update
    Vec eta;                  // rates used for this step's update
    std::size_t loss_calls = 0;  // cumulative, training side only
    // Set on the last step of an epoch.
    std::optional<double> epoch_train_loss;  // mean of the epoch's batch losses
    std::optional<double> test_loss;
    std::optional<double> test_accuracy;
};

struct GridEntry {
    double lr = 0.0;
    double final_train_loss = 0.0;  // +inf when the run diverged
};

struct RunSummary {
    std::size_t iterations = 0;
    std::size_t epochs = 0;
    std::size_t groups = 0;
    std::vector<std::string> group_names;
    double final_train_loss = 0.0;  // full training set
    std::optional<double> final_test_loss;
    std::optional<double> final_test_accuracy;
    std::size_t loss_calls = 0;       // training loop forward passes
    std::size_t grad_calls = 0;
    std::size_t eval_loss_calls = 0;  // test-set and final evaluations, tracked apart
    std::optional<std::size_t> expected_loss_calls;  // hidlr runs
    std::size_t refreshes = 0;
    std::size_t accepted_refreshes = 0;
    Vec final_eta;
    std::vector<GridEntry> grid;  // grid method only
    std::optional<double> grid_best_lr;
};

struct RunRecord {
    std::vector<StepRow> steps;
    std::vector<RefreshDiagnostics> refreshes;
    RunSummary summary;
    Vec final_params;
};

// Runs the configured method. Any library error is rethrown with the problem,
// method and iteration prepended; ValidationError keeps its type.
RunRecord run_experiment(const ExperimentConfig& cfg);

// Writes metrics.jsonl (one line per step), probes.jsonl (one line per probe
// row of every refresh), summary.json and config.json (when cfg is given).
// Throws IoError.
void emit_metrics(const RunRecord& record, const std::filesystem::path& dir,
                  const ExperimentConfig* cfg = nullptr);

std::string metrics_jsonl(const RunRecord& record);
std::string probes_jsonl(const RunRecord& record);
std::string summary_json(const RunRecord& record);

struct TaylorRow {
    std::size_t group = 0;
    double xi = 0.0;
    double measured = 0.0;   // L(w - xi dir_(k)) - L(w)
    double predicted = 0.0;  // a/2 xi^2 - b xi
};

struct TaylorTable {
    std::vector<TaylorRow> rows;
    Vec eta;  // probe rates behind the fit
    Vec a;
    Vec b;
    Vec r2;          // per group, measured vs predicted over the table rows
    double pooled_r2 = 0.0;
};

// Fits the per-group quadratic from the standard probes at rates `eta`, then
// for every group k and every xi in xi_grid[k] (or the one shared grid when
// xi_grid has a single entry) compares the measured loss change along -dir
// restricted to group k against the fitted prediction. Throws
// ValidationError on an empty grid.
TaylorTable taylor_diagnostics(const LossProblem& problem, std::span<const double> w, std::span<const double> dir,
                               const GroupLayout& layout, std::span<const double> eta,
                               const std::vector<Vec>& xi_grid, const Batch& batch);

// Trains cfg with Hi-DLR up to cfg.diag.iteration and evaluates the table at
// xi = multiplier * eta_k along the direction of the next step.
TaylorTable taylor_at_iteration(const ExperimentConfig& cfg);

}  // namespace hidlr
