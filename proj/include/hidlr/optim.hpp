#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hidlr/core_math.hpp"
#include "hidlr/problem.hpp"

namespace hidlr {

enum class OptimizerKind { sgd, momentum, adamw };

std::string to_string(OptimizerKind kind);
// Accepts "sgd", "momentum", "adamw" and "adam" (AdamW without decay).
std::optional<OptimizerKind> parse_optimizer_kind(std::string_view name);

struct OptimizerHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double momentum = 0.9;
    double weight_decay = 0.0;
    // AdamW only: fold lambda * w into the returned direction so that probes
    // measure the loss along the actual update. When false the decay is
    // applied separately by apply_decoupled_decay().
    bool decay_in_direction = true;
};

// Moments and step counter of a base optimizer; m and v are empty for sgd.
struct OptimizerState {
    OptimizerKind kind = OptimizerKind::sgd;
    OptimizerHyper hyper;
    Vec m;
    Vec v;
    std::uint64_t t = 0;

    static OptimizerState make(OptimizerKind kind, std::size_t dimension, OptimizerHyper hyper = {});

    bool operator==(const OptimizerState&) const = default;
};

// Preconditioned direction g^optim. Advances the state exactly once.
//   sgd      -> g
//   momentum -> m = mu m + g
//   adamw    -> m_hat / (sqrt(v_hat) + eps) [+ lambda w]
Vec direction(OptimizerState& state, std::span<const double> g, std::span<const double> w);

// w_(k) -= lr_k * dir_(k) for every group k.
void apply_update(std::span<double> w, const GroupLayout& layout, std::span<const double> lr,
                  std::span<const double> dir);

// w_(k) *= (1 - lr_k * lambda); used when decay is not folded into the direction.
void apply_decoupled_decay(std::span<double> w, const GroupLayout& layout, std::span<const double> lr,
                           double lambda);

enum class Schedule { constant, linear, cosine };

std::string to_string(Schedule s);
std::optional<Schedule> parse_schedule(std::string_view name);

// constant: eta0; linear: eta0 (1 - t/T); cosine: eta0 (1 + cos(pi t / T)) / 2.
double scheduler_lr(Schedule kind, std::size_t t, std::size_t total, double eta0);

// {1e-5 * 10^(k/2) : k = 0..11}
Vec default_toy_grid();

struct GridResult {
    double best_lr = 0.0;
    double best_loss = 0.0;
    Vec lrs;     // ascending
    Vec losses;  // final full-batch training loss for each lr; +inf if diverged
};

// Constant-ULR runs of `iters` full-batch steps from the problem's initial
// point; the smallest final training loss wins, ties go to the smaller lr.
GridResult grid_search(const LossProblem& problem, OptimizerKind kind, std::span<const double> grid,
                       std::size_t iters, const OptimizerHyper& hyper = {}, std::uint64_t init_seed = 0);

}  // namespace hidlr
