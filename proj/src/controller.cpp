#include "hidlr/controller.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hidlr/errors.hpp"

namespace hidlr {

void HiDlrConfig::validate(std::size_t groups) const {
    if (phi < 1) throw ValidationError("hidlr.phi must be >= 1");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("hidlr.gamma must lie in [0, 1)");
    if (!(r2_threshold > 0.0 && r2_threshold <= 1.0)) throw ValidationError("hidlr.r2_threshold must lie in (0, 1]");
    if (!(eta_min > 0.0 && eta_min < eta_max)) throw ValidationError("hidlr: need 0 < eta_min < eta_max");
    if (!(probe_floor > 0.0)) throw ValidationError("hidlr.probe_floor must be positive");
    if (eta0.size() != groups) {
        throw ValidationError("hidlr.eta0 has " + std::to_string(eta0.size()) + " entries for " +
                              std::to_string(groups) + " groups");
    }
    for (double e : eta0)
        if (!(e >= eta_min && e <= eta_max)) throw ValidationError("hidlr.eta0 entries must lie in [eta_min, eta_max]");
}

std::size_t ProbeMatrix::group_of(std::size_t j) const {
    for (std::size_t k = 0; k < rows.cols; ++k)
        if (rows(j, k) != 0.0) return k;
    return j / kProbeMultipliers.size();
}

ProbeMatrix build_probe_matrix(std::span<const double> eta_prev, double probe_floor) {
    const std::size_t k_groups = eta_prev.size();
    if (k_groups == 0) throw ValidationError("build_probe_matrix: no groups");
    const std::size_t per = kProbeMultipliers.size();
    ProbeMatrix e;
    e.rows = Mat(per * k_groups, k_groups);
    e.floored.assign(k_groups, false);
    for (std::size_t k = 0; k < k_groups; ++k) {
        double eta = eta_prev[k];
        if (!(eta >= probe_floor)) {
            eta = probe_floor;
            e.floored[k] = true;
        }
        for (std::size_t i = 0; i < per; ++i) e.rows(k * per + i, k) = kProbeMultipliers[i] * eta;
    }
    return e;
}

Vec evaluate_probes(const LossProblem& problem, std::span<const double> w, std::span<const double> dir,
                    const GroupLayout& layout, const ProbeMatrix& probes, const Batch& batch, double loss0) {
    if (w.size() != layout.dimension() || dir.size() != w.size() || probes.groups() != layout.groups()) {
        throw LengthMismatch("evaluate_probes: lengths inconsistent with layout");
    }
    Vec out(probes.probes(), 0.0);
    Vec scratch;  // lazily materialized copy of w for the generic path
    std::string bad;
    for (std::size_t k = 0; k < layout.groups(); ++k) {
        std::vector<std::size_t> rows;
        Vec xis;
        for (std::size_t j = 0; j < probes.probes(); ++j) {
            if (probes.group_of(j) == k) {
                rows.push_back(j);
                xis.push_back(probes.xi(j));
            }
        }
        if (rows.empty()) continue;
        Vec losses;
        if (auto fast = problem.group_line_losses(w, dir, layout, k, xis, batch)) {
            losses = std::move(*fast);
        } else {
            if (scratch.empty()) scratch.assign(w.begin(), w.end());
            const auto& seg = layout[k];
            for (double xi : xis) {
                for (std::size_t i = seg.offset; i < seg.offset + seg.len; ++i) scratch[i] = w[i] - xi * dir[i];
                losses.push_back(problem.loss(scratch, batch));
            }
            std::copy(w.begin() + seg.offset, w.begin() + seg.offset + seg.len, scratch.begin() + seg.offset);
        }
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const double dl = losses[r] - loss0;
            if (!std::isfinite(dl) && bad.empty()) {
                bad = "probe " + std::to_string(rows[r]) + " (group " + layout[k].name + ") produced a non-finite loss";
            }
            out[rows[r]] = dl;
        }
    }
    // Every probe is evaluated before raising so the loss-call count stays fixed.
    if (!bad.empty()) throw NonFiniteLoss(bad);
    return out;
}

QuadraticFit fit_diag_quadratic(const ProbeMatrix& probes, std::span<const double> delta_loss) {
    if (delta_loss.size() != probes.probes()) throw LengthMismatch("fit_diag_quadratic: one response per probe");
    if (!all_finite(delta_loss)) throw NonFiniteLoss("fit_diag_quadratic: non-finite response");
    const std::size_t k_groups = probes.groups();
    QuadraticFit fit;
    fit.a.assign(k_groups, 0.0);
    fit.b.assign(k_groups, 0.0);
    fit.r2.assign(k_groups, 0.0);
    fit.predicted.assign(probes.probes(), 0.0);

    for (std::size_t k = 0; k < k_groups; ++k) {
        std::vector<std::size_t> rows;
        double scale = 0.0;
        for (std::size_t j = 0; j < probes.probes(); ++j) {
            if (probes.rows(j, k) != 0.0) {
                rows.push_back(j);
                scale = std::max(scale, std::abs(probes.rows(j, k)));
            }
        }
        if (rows.empty()) throw SingularFit("fit_diag_quadratic: group " + std::to_string(k) + " has no probes");

        // Fit in u = xi / scale so the design stays O(1) for any eta magnitude;
        // the origin row (0, 0) is appended last.
        Mat x(rows.size() + 1, 2);
        Vec y(rows.size() + 1, 0.0);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const double u = probes.rows(rows[r], k) / scale;
            x(r, 0) = 0.5 * u * u;
            x(r, 1) = -u;
            y[r] = delta_loss[rows[r]];
        }
        Vec coef;
        try {
            coef = solve_least_squares(x, y);
        } catch (const SingularSystem&) {
            throw SingularFit("fit_diag_quadratic: group " + std::to_string(k) + " probes do not determine a parabola");
        }
        fit.a[k] = coef[0] / (scale * scale);
        fit.b[k] = coef[1] / scale;

        Vec truth, pred;
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const double u = probes.rows(rows[r], k) / scale;
            const double p = 0.5 * coef[0] * u * u - coef[1] * u;
            fit.predicted[rows[r]] = p;
            truth.push_back(y[r]);
            pred.push_back(p);
        }
        fit.r2[k] = truth.size() >= 2 ? r2_score(truth, pred) : 0.0;
    }
    fit.pooled_r2 = probes.probes() >= 2 ? r2_score(delta_loss, fit.predicted) : 0.0;
    return fit;
}

OptimalLr optimal_lr(const QuadraticFit& fit) {
    OptimalLr out;
    out.eta.assign(fit.a.size(), 0.0);
    out.valid.assign(fit.a.size(), false);
    for (std::size_t k = 0; k < fit.a.size(); ++k) {
        const double a = fit.a[k];
        const double b = fit.b[k];
        if (a > 0.0 && a > 1e-12 * std::abs(b)) {
            out.eta[k] = b / a;
            out.valid[k] = true;
        }
    }
    return out;
}

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

// Empty string when group k passes its slope/curvature tests.
std::string group_failure(const QuadraticFit& fit, const OptimalLr& opt, std::size_t k) {
    if (!opt.valid[k]) return "non-positive curvature a=" + fmt(fit.a[k]) + " in group " + std::to_string(k);
    if (!(fit.b[k] > 0.0)) return "non-positive slope b=" + fmt(fit.b[k]) + " in group " + std::to_string(k);
    return {};
}

}  // namespace

LrState gate_and_update(const LrState& state, const QuadraticFit& fit, const OptimalLr& opt,
                        const HiDlrConfig& cfg) {
    const std::size_t k_groups = state.eta.size();
    if (fit.a.size() != k_groups || opt.eta.size() != k_groups) throw LengthMismatch("gate_and_update: group count");
    LrState next = state;
    next.group_accepted.assign(k_groups, false);

    auto blend = [&](std::size_t k) {
        const double e = cfg.gamma * state.eta[k] + (1.0 - cfg.gamma) * opt.eta[k];
        next.eta[k] = std::clamp(e, cfg.eta_min, cfg.eta_max);
        next.group_accepted[k] = true;
    };

    if (cfg.gating == GatingMode::global) {
        std::string reason;
        for (std::size_t k = 0; k < k_groups && reason.empty(); ++k) reason = group_failure(fit, opt, k);
        if (reason.empty() && !(fit.pooled_r2 > cfg.r2_threshold)) {
            reason = "pooled R2 " + fmt(fit.pooled_r2) + " <= " + fmt(cfg.r2_threshold);
        }
        next.last_accepted = reason.empty();
        next.last_reason = reason.empty() ? "accepted" : reason;
        if (next.last_accepted)
            for (std::size_t k = 0; k < k_groups; ++k) blend(k);
        return next;
    }

    std::string reasons;
    std::size_t accepted = 0;
    for (std::size_t k = 0; k < k_groups; ++k) {
        std::string why = group_failure(fit, opt, k);
        if (why.empty() && !(fit.r2[k] > cfg.r2_threshold)) {
            why = "R2 " + fmt(fit.r2[k]) + " <= " + fmt(cfg.r2_threshold) + " in group " + std::to_string(k);
        }
        if (why.empty()) {
            blend(k);
            ++accepted;
        } else {
            reasons += (reasons.empty() ? "" : "; ") + why;
        }
    }
    next.last_accepted = accepted > 0;
    next.last_reason = reasons.empty() ? "accepted" : reasons;
    return next;
}

StepResult hidlr_step(const LossProblem& problem, std::span<double> w, LrState& state, OptimizerState& opt,
                      const HiDlrConfig& cfg, const GroupLayout& layout, const Batch& batch, std::size_t t,
                      const Batch* probe_batch) {
    if (w.size() != layout.dimension() || state.eta.size() != layout.groups()) {
        throw LengthMismatch("hidlr_step: parameters, rates and layout disagree");
    }
    StepResult result;
    Vec g(w.size());
    result.loss = problem.value_and_grad(w, batch, g);
    const Vec dir = direction(opt, g, w);

    if (t % cfg.phi == 0) {
        RefreshDiagnostics diag;
        diag.t = t;
        diag.eta_before = state.eta;
        const ProbeMatrix probes = build_probe_matrix(state.eta, cfg.probe_floor);
        diag.floored = probes.floored;
        for (std::size_t j = 0; j < probes.probes(); ++j) {
            diag.xi.push_back(probes.xi(j));
            diag.group.push_back(probes.group_of(j));
        }
        try {
            const Batch& pb = probe_batch ? *probe_batch : batch;
            const double base = probe_batch ? problem.loss(w, pb) : result.loss;
            diag.delta_loss = evaluate_probes(problem, w, dir, layout, probes, pb, base);
            diag.fit = fit_diag_quadratic(probes, diag.delta_loss);
            diag.optimal = optimal_lr(diag.fit);
            state = gate_and_update(state, diag.fit, diag.optimal, cfg);
        } catch (const NonFiniteLoss& e) {
            state.last_accepted = false;
            state.last_reason = std::string("non-finite probe loss: ") + e.what();
            state.group_accepted.assign(layout.groups(), false);
        } catch (const SingularFit& e) {
            state.last_accepted = false;
            state.last_reason = std::string("singular fit: ") + e.what();
            state.group_accepted.assign(layout.groups(), false);
        }
        diag.accepted = state.last_accepted;
        diag.reason = state.last_reason;
        diag.eta_after = state.eta;
        result.refresh = std::move(diag);
    }

    if (opt.kind == OptimizerKind::adamw && !opt.hyper.decay_in_direction && opt.hyper.weight_decay != 0.0) {
        apply_decoupled_decay(w, layout, state.eta, opt.hyper.weight_decay);
    }
    apply_update(w, layout, state.eta, dir);
    return result;
}

std::size_t forward_pass_budget(std::size_t iterations, std::size_t groups, std::size_t phi) {
    if (iterations == 0 || groups == 0 || phi == 0) throw ValidationError("forward_pass_budget: T, K, phi must be >= 1");
    const std::size_t refreshes = (iterations + phi - 1) / phi;
    return iterations + 4 * groups * refreshes;
}

}  // namespace hidlr
