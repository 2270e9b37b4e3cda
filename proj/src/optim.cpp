#include "hidlr/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "hidlr/errors.hpp"
#include "hidlr/rng.hpp"

namespace hidlr {

std::string to_string(OptimizerKind kind) {
    switch (kind) {
        case OptimizerKind::sgd: return "sgd";
        case OptimizerKind::momentum: return "momentum";
        case OptimizerKind::adamw: return "adamw";
    }
    return "?";
}

std::optional<OptimizerKind> parse_optimizer_kind(std::string_view name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "momentum") return OptimizerKind::momentum;
    if (name == "adamw" || name == "adam") return OptimizerKind::adamw;
    return std::nullopt;
}

OptimizerState OptimizerState::make(OptimizerKind kind, std::size_t dimension, OptimizerHyper hyper) {
    OptimizerState s;
    s.kind = kind;
    s.hyper = hyper;
    if (kind != OptimizerKind::sgd) s.m.assign(dimension, 0.0);
    if (kind == OptimizerKind::adamw) s.v.assign(dimension, 0.0);
    return s;
}

Vec direction(OptimizerState& state, std::span<const double> g, std::span<const double> w) {
    if (g.size() != w.size()) throw LengthMismatch("direction: gradient and parameters differ in length");
    if (state.kind != OptimizerKind::sgd && state.m.size() != g.size()) {
        throw LengthMismatch("direction: optimizer state sized for a different dimension");
    }
    ++state.t;
    const auto& h = state.hyper;
    switch (state.kind) {
        case OptimizerKind::sgd: return Vec(g.begin(), g.end());
        case OptimizerKind::momentum: {
            for (std::size_t i = 0; i < g.size(); ++i) state.m[i] = h.momentum * state.m[i] + g[i];
            return state.m;
        }
        case OptimizerKind::adamw: {
            const double t = static_cast<double>(state.t);
            const double c1 = 1.0 - std::pow(h.beta1, t);
            const double c2 = 1.0 - std::pow(h.beta2, t);
            const bool fold = h.decay_in_direction && h.weight_decay != 0.0;
            Vec d(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) {
                state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g[i];
                state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g[i] * g[i];
                const double mhat = state.m[i] / c1;
                const double vhat = state.v[i] / c2;
                d[i] = mhat / (std::sqrt(vhat) + h.eps);
                if (fold) d[i] += h.weight_decay * w[i];
            }
            return d;
        }
    }
    return {};
}

void apply_update(std::span<double> w, const GroupLayout& layout, std::span<const double> lr,
                  std::span<const double> dir) {
    if (w.size() != layout.dimension() || dir.size() != w.size() || lr.size() != layout.groups()) {
        throw LengthMismatch("apply_update: lengths inconsistent with layout");
    }
    for (std::size_t k = 0; k < layout.groups(); ++k) {
        const auto& seg = layout[k];
        const double eta = lr[k];
        for (std::size_t i = seg.offset; i < seg.offset + seg.len; ++i) w[i] -= eta * dir[i];
    }
}

void apply_decoupled_decay(std::span<double> w, const GroupLayout& layout, std::span<const double> lr,
                           double lambda) {
    if (w.size() != layout.dimension() || lr.size() != layout.groups()) {
        throw LengthMismatch("apply_decoupled_decay: lengths inconsistent with layout");
    }
    for (std::size_t k = 0; k < layout.groups(); ++k) {
        const auto& seg = layout[k];
        const double keep = 1.0 - lr[k] * lambda;
        for (std::size_t i = seg.offset; i < seg.offset + seg.len; ++i) w[i] *= keep;
    }
}

std::string to_string(Schedule s) {
    switch (s) {
        case Schedule::constant: return "constant";
        case Schedule::linear: return "linear";
        case Schedule::cosine: return "cosine";
    }
    return "?";
}

std::optional<Schedule> parse_schedule(std::string_view name) {
    if (name == "constant") return Schedule::constant;
    if (name == "linear") return Schedule::linear;
    if (name == "cosine") return Schedule::cosine;
    return std::nullopt;
}

double scheduler_lr(Schedule kind, std::size_t t, std::size_t total, double eta0) {
    if (total == 0 || t >= total) throw ValidationError("scheduler_lr: need 0 <= t < T");
    const double frac = static_cast<double>(t) / static_cast<double>(total);
    switch (kind) {
        case Schedule::constant: return eta0;
        case Schedule::linear: return eta0 * (1.0 - frac);
        case Schedule::cosine: return eta0 * (1.0 + std::cos(std::numbers::pi * frac)) / 2.0;
    }
    return eta0;
}

Vec default_toy_grid() {
    Vec grid;
    for (int k = 0; k <= 11; ++k) grid.push_back(1e-5 * std::pow(10.0, k / 2.0));
    return grid;
}

GridResult grid_search(const LossProblem& problem, OptimizerKind kind, std::span<const double> grid,
                       std::size_t iters, const OptimizerHyper& hyper, std::uint64_t init_seed) {
    if (grid.empty()) throw ValidationError("grid_search: empty grid");
    for (double lr : grid)
        if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("grid_search: rates must be positive and finite");
    GridResult out;
    out.lrs.assign(grid.begin(), grid.end());
    std::sort(out.lrs.begin(), out.lrs.end());
    out.lrs.erase(std::unique(out.lrs.begin(), out.lrs.end()), out.lrs.end());

    const Batch batch = Batch::all(Split::train, problem.sample_count(Split::train));
    const GroupLayout layout = GroupLayout::single(problem.dimension());
    out.best_loss = std::numeric_limits<double>::infinity();
    out.best_lr = out.lrs.front();
    for (double lr : out.lrs) {
        Rng rng(init_seed);
        Vec w = problem.initial_params(rng);
        OptimizerState state = OptimizerState::make(kind, w.size(), hyper);
        const Vec eta{lr};
        bool finite = true;
        for (std::size_t t = 0; t < iters && finite; ++t) {
            const Vec g = problem.grad(w, batch);
            const Vec d = direction(state, g, w);
            if (!hyper.decay_in_direction && kind == OptimizerKind::adamw && hyper.weight_decay != 0.0) {
                apply_decoupled_decay(w, layout, eta, hyper.weight_decay);
            }
            apply_update(w, layout, eta, d);
            finite = all_finite(w);
        }
        double final_loss = finite ? problem.loss(w, batch) : std::numeric_limits<double>::infinity();
        if (!std::isfinite(final_loss)) final_loss = std::numeric_limits<double>::infinity();
        out.losses.push_back(final_loss);
        if (final_loss < out.best_loss) {
            out.best_loss = final_loss;
            out.best_lr = lr;
        }
    }
    return out;
}

}  // namespace hidlr
