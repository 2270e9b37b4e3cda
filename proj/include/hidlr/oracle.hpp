#pragma once

#include <optional>
#include <span>
#include <vector>

#include "hidlr/core_math.hpp"
#include "hidlr/problem.hpp"

// Brute-force references for testing the controller. Nothing here is used on
// the training path.
namespace hidlr::oracle {

// Default step: 1e-4 (1 + ||w||) / (1 + ||d||).
double default_fd_step(std::span<const double> w, std::span<const double> d);

// (L(w + eps d) - L(w - eps d)) / (2 eps) ~ G(w)^T d
double fd_directional_grad(const LossProblem& problem, std::span<const double> w, std::span<const double> d,
                           const Batch& batch, std::optional<double> eps = std::nullopt);

// (L(w + eps d) - 2 L(w) + L(w - eps d)) / eps^2 ~ d^T H(w) d
double fd_directional_curvature(const LossProblem& problem, std::span<const double> w,
                                std::span<const double> d, const Batch& batch,
                                std::optional<double> eps = std::nullopt);

struct FullQuadraticFit {
    Mat a;  // K x K, symmetric
    Vec b;  // K
};

// Least squares for Delta L = -xi^T b + 1/2 xi^T A xi over symmetric A.
// Needs at least K(K+3)/2 probes spanning the monomials; throws
// SingularSystem otherwise.
FullQuadraticFit fit_full_quadratic(const std::vector<Vec>& probes, std::span<const double> delta_loss);

// eta = A^{-1} b. Throws NotPositiveDefinite unless every Cholesky pivot
// exceeds 1e-12 trace(A) / K.
Vec full_hidlr(const FullQuadraticFit& fit);

// w - Q^{-1} (Q w): the exact minimizer of 1/2 w^T Q w for SPD Q.
Vec newton_step_quadratic(const Mat& q, std::span<const double> w);

}  // namespace hidlr::oracle
