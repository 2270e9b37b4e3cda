#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace hidlr {

using Vec = std::vector<double>;

// Dense row-major matrix.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vec values;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
    Mat(std::size_t r, std::size_t c, Vec v);

    double& operator()(std::size_t i, std::size_t j) { return values[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }

    std::span<double> row(std::size_t i) { return {values.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }

    static Mat identity(std::size_t n);
    static Mat from_rows(const std::vector<Vec>& rows);
};

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
bool all_finite(std::span<const double> a);

Vec matvec(const Mat& m, std::span<const double> x);
Mat transpose(const Mat& m);
Mat matmul(const Mat& a, const Mat& b);

// Eigenvalues of a symmetric matrix (cyclic Jacobi), ascending.
Vec symmetric_eigenvalues(const Mat& a);

// Solves A x = b for symmetric positive definite A by Cholesky.
// Throws NotPositiveDefinite when a pivot is <= min_pivot.
Vec cholesky_solve(const Mat& a, std::span<const double> b, double min_pivot = 0.0);

// argmin ||X beta - y||^2 through the normal equations. Throws SingularSystem
// when sigma_min(X) / sigma_max(X) < 1e-12 or when X has fewer rows than columns.
Vec solve_least_squares(const Mat& x, std::span<const double> y);

// 1 - SS_res / SS_tot; 0 when SS_tot < 1e-30.
double r2_score(std::span<const double> y_true, std::span<const double> y_pred);

}  // namespace hidlr
