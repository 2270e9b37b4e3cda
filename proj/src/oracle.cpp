#include "hidlr/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "hidlr/errors.hpp"

namespace hidlr::oracle {
namespace {

Vec shifted(std::span<const double> w, std::span<const double> d, double step) {
    if (w.size() != d.size()) throw LengthMismatch("oracle: direction length mismatch");
    Vec out(w.begin(), w.end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += step * d[i];
    return out;
}

double resolve_step(std::span<const double> w, std::span<const double> d, std::optional<double> eps) {
    const double e = eps ? *eps : default_fd_step(w, d);
    if (!(e > 0.0)) throw ValidationError("oracle: finite-difference step must be positive");
    return e;
}

}  // namespace

double default_fd_step(std::span<const double> w, std::span<const double> d) {
    return 1e-4 * (1.0 + norm(w)) / (1.0 + norm(d));
}

double fd_directional_grad(const LossProblem& problem, std::span<const double> w, std::span<const double> d,
                           const Batch& batch, std::optional<double> eps) {
    const double e = resolve_step(w, d, eps);
    const double plus = problem.loss(shifted(w, d, e), batch);
    const double minus = problem.loss(shifted(w, d, -e), batch);
    return (plus - minus) / (2.0 * e);
}

double fd_directional_curvature(const LossProblem& problem, std::span<const double> w,
                                std::span<const double> d, const Batch& batch, std::optional<double> eps) {
    const double e = resolve_step(w, d, eps);
    const double plus = problem.loss(shifted(w, d, e), batch);
    const double mid = problem.loss(w, batch);
    const double minus = problem.loss(shifted(w, d, -e), batch);
    return (plus - 2.0 * mid + minus) / (e * e);
}

FullQuadraticFit fit_full_quadratic(const std::vector<Vec>& probes, std::span<const double> delta_loss) {
    if (probes.empty()) throw SingularSystem("fit_full_quadratic: no probes");
    if (probes.size() != delta_loss.size()) throw LengthMismatch("fit_full_quadratic: one response per probe");
    const std::size_t k = probes.front().size();
    for (const auto& p : probes)
        if (p.size() != k) throw LengthMismatch("fit_full_quadratic: ragged probes");

    // Rescale xi to O(1) so the monomial columns are comparable.
    double scale = 0.0;
    for (const auto& p : probes)
        for (double v : p) scale = std::max(scale, std::abs(v));
    if (!(scale > 0.0)) throw SingularSystem("fit_full_quadratic: all probes are zero");

    // Unknowns: b_1..b_K, then A_ij for i <= j.
    const std::size_t unknowns = k + k * (k + 1) / 2;
    if (probes.size() < unknowns) throw SingularSystem("fit_full_quadratic: too few probes");
    Mat x(probes.size(), unknowns);
    for (std::size_t r = 0; r < probes.size(); ++r) {
        Vec u(k);
        for (std::size_t i = 0; i < k; ++i) u[i] = probes[r][i] / scale;
        std::size_t c = 0;
        for (std::size_t i = 0; i < k; ++i) x(r, c++) = -u[i];
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = i; j < k; ++j) x(r, c++) = i == j ? 0.5 * u[i] * u[i] : u[i] * u[j];
    }
    const Vec coef = solve_least_squares(x, delta_loss);

    FullQuadraticFit fit;
    fit.b.resize(k);
    fit.a = Mat(k, k);
    std::size_t c = 0;
    for (std::size_t i = 0; i < k; ++i) fit.b[i] = coef[c++] / scale;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i; j < k; ++j) {
            const double v = coef[c++] / (scale * scale);
            fit.a(i, j) = v;
            fit.a(j, i) = v;
        }
    return fit;
}

Vec full_hidlr(const FullQuadraticFit& fit) {
    const std::size_t k = fit.b.size();
    if (fit.a.rows != k || fit.a.cols != k) throw LengthMismatch("full_hidlr: A and b disagree");
    double trace = 0.0;
    for (std::size_t i = 0; i < k; ++i) trace += fit.a(i, i);
    const double min_pivot = 1e-12 * trace / static_cast<double>(k);
    if (!(trace > 0.0)) throw NotPositiveDefinite("full_hidlr: non-positive trace");
    return cholesky_solve(fit.a, fit.b, min_pivot);
}

Vec newton_step_quadratic(const Mat& q, std::span<const double> w) {
    if (q.rows != q.cols || q.rows != w.size()) throw LengthMismatch("newton_step_quadratic: shape mismatch");
    double trace = 0.0;
    for (std::size_t i = 0; i < q.rows; ++i) trace += q(i, i);
    if (!(trace > 0.0)) throw NotPositiveDefinite("newton_step_quadratic: Q is not positive definite");
    const Vec grad = matvec(q, w);
    const Vec step = cholesky_solve(q, grad, 1e-12 * trace / static_cast<double>(q.rows));
    Vec out(w.begin(), w.end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= step[i];
    return out;
}

}  // namespace hidlr::oracle
