#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hidlr/core_math.hpp"
#include "hidlr/optim.hpp"
#include "hidlr/problem.hpp"

namespace hidlr {

// Learning-rate multipliers probed for each group.
inline constexpr std::array<double, 4> kProbeMultipliers{-2.0, -1.0, 1.0, 2.0};

enum class GatingMode { global, per_group };

struct HiDlrConfig {
    std::size_t phi = 1;         // refresh every phi iterations
    double gamma = 0.9;          // EMA weight on the previous rates
    double r2_threshold = 0.95;  // accept only when R^2 exceeds this
    Vec eta0;                    // initial per-group rates
    double eta_min = 1e-10;
    double eta_max = 1e2;
    double probe_floor = 1e-12;
    GatingMode gating = GatingMode::global;
    // Evaluate probes on a separate batch instead of the gradient's batch.
    bool fresh_probe_batch = false;

    // Throws ValidationError on phi == 0, gamma outside [0, 1), a threshold
    // outside (0, 1], eta_min >= eta_max, or eta0 of the wrong length / range.
    void validate(std::size_t groups) const;
};

// 4K x K perturbations: rows 4k..4k+3 carry kProbeMultipliers * eta_k in
// column k and zeros elsewhere.
struct ProbeMatrix {
    Mat rows;
    std::vector<bool> floored;  // per group: eta was raised to the probe floor

    std::size_t groups() const { return rows.cols; }
    std::size_t probes() const { return rows.rows; }
    std::size_t group_of(std::size_t j) const;
    double xi(std::size_t j) const { return rows(j, group_of(j)); }
};

ProbeMatrix build_probe_matrix(std::span<const double> eta_prev, double probe_floor = 1e-12);

// Delta L_j = L(w - row_j (.) dir) - loss0 for every probe row, all on one
// batch. w is never modified. Throws NonFiniteLoss if any probe is NaN/Inf.
Vec evaluate_probes(const LossProblem& problem, std::span<const double> w, std::span<const double> dir,
                    const GroupLayout& layout, const ProbeMatrix& probes, const Batch& batch, double loss0);

// Per-group estimates of the quadratic Delta L ~ a/2 xi^2 - b xi.
struct QuadraticFit {
    Vec a;          // g_k^T H_kk g_k
    Vec b;          // G_k^T g_k
    Vec r2;         // per group, over its four probes
    double pooled_r2 = 0.0;
    Vec predicted;  // model value at every probe row
};

// Independent two-parameter least-squares fit per group over its four probes
// plus the origin. Throws SingularFit when a group has no nonzero probe.
QuadraticFit fit_diag_quadratic(const ProbeMatrix& probes, std::span<const double> delta_loss);

struct OptimalLr {
    Vec eta;                  // b_k / a_k where valid, 0 otherwise
    std::vector<bool> valid;  // a_k > 0 and a_k > 1e-12 |b_k|
};

OptimalLr optimal_lr(const QuadraticFit& fit);

struct LrState {
    Vec eta;
    bool last_accepted = false;
    std::string last_reason;
    std::vector<bool> group_accepted;
};

// Applies the EMA update when the gates pass, otherwise keeps eta unchanged
// bit-for-bit. Global mode gates on all groups jointly with the pooled R^2;
// per-group mode gates each group on its own slope, curvature and R^2.
LrState gate_and_update(const LrState& state, const QuadraticFit& fit, const OptimalLr& opt,
                        const HiDlrConfig& cfg);

struct RefreshDiagnostics {
    std::size_t t = 0;
    Vec eta_before;
    Vec eta_after;
    Vec xi;            // per probe row
    std::vector<std::size_t> group;  // per probe row
    Vec delta_loss;    // measured, per probe row
    QuadraticFit fit;  // empty when the probes failed
    OptimalLr optimal;
    std::vector<bool> floored;
    bool accepted = false;
    std::string reason;
};

struct StepResult {
    double loss = 0.0;  // L0 on the step's batch, before the update
    std::optional<RefreshDiagnostics> refresh;
};

// One iteration: L0 and gradient on `batch`, the optimizer direction, a rate
// refresh when t % phi == 0, then the grouped update. Exactly one
// value_and_grad call per step plus 4K probe losses on refresh steps (and one
// more loss call when `probe_batch` is given).
StepResult hidlr_step(const LossProblem& problem, std::span<double> w, LrState& state, OptimizerState& opt,
                      const HiDlrConfig& cfg, const GroupLayout& layout, const Batch& batch, std::size_t t,
                      const Batch* probe_batch = nullptr);

// Forward passes (loss evaluations, gradient passes excluded) for T steps:
// T + 4K * ceil(T / phi).
std::size_t forward_pass_budget(std::size_t iterations, std::size_t groups, std::size_t phi);

}  // namespace hidlr
