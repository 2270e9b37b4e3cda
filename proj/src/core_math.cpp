#include "hidlr/core_math.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hidlr/errors.hpp"

namespace hidlr {

Mat::Mat(std::size_t r, std::size_t c, Vec v) : rows(r), cols(c), values(std::move(v)) {
    if (values.size() != rows * cols) {
        throw LengthMismatch("Mat: " + std::to_string(rows) + "x" + std::to_string(cols) +
                             " needs " + std::to_string(rows * cols) + " values, got " +
                             std::to_string(values.size()));
    }
}

Mat Mat::identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Mat Mat::from_rows(const std::vector<Vec>& rows) {
    if (rows.empty()) return {};
    Mat m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != m.cols) throw LengthMismatch("Mat::from_rows: ragged rows");
        std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    }
    return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw LengthMismatch("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

bool all_finite(std::span<const double> a) {
    return std::all_of(a.begin(), a.end(), [](double x) { return std::isfinite(x); });
}

Vec matvec(const Mat& m, std::span<const double> x) {
    if (x.size() != m.cols) throw LengthMismatch("matvec: length mismatch");
    Vec out(m.rows, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) out[i] = dot(m.row(i), x);
    return out;
}

Mat transpose(const Mat& m) {
    Mat t(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
    return t;
}

Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols != b.rows) throw LengthMismatch("matmul: inner dimensions differ");
    Mat c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

Vec symmetric_eigenvalues(const Mat& input) {
    if (input.rows != input.cols) throw DimensionMismatch("symmetric_eigenvalues: not square");
    const std::size_t n = input.rows;
    Mat a = input;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        double diag = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            diag += a(i, i) * a(i, i);
            for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        }
        if (off <= 1e-30 * diag || off == 0.0) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    Vec eig(n);
    for (std::size_t i = 0; i < n; ++i) eig[i] = a(i, i);
    std::sort(eig.begin(), eig.end());
    return eig;
}

Vec cholesky_solve(const Mat& a, std::span<const double> b, double min_pivot) {
    if (a.rows != a.cols || b.size() != a.rows) throw LengthMismatch("cholesky_solve: shape mismatch");
    const std::size_t n = a.rows;
    Mat l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = a(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > min_pivot)) {
            throw NotPositiveDefinite("cholesky_solve: pivot " + std::to_string(j) + " = " +
                                      std::to_string(d));
        }
        l(j, j) = std::sqrt(d);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / l(j, j);
        }
    }
    Vec z(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * z[k];
        z[i] = s / l(i, i);
    }
    Vec x(n);
    for (std::size_t ii = n; ii-- > 0;) {
        double s = z[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
        x[ii] = s / l(ii, ii);
    }
    return x;
}

Vec solve_least_squares(const Mat& x, std::span<const double> y) {
    if (y.size() != x.rows) throw LengthMismatch("solve_least_squares: y has wrong length");
    const std::size_t n = x.rows;
    const std::size_t p = x.cols;
    if (p == 0) return {};
    if (n < p) throw SingularSystem("solve_least_squares: fewer rows than unknowns");

    Mat xtx(p, p);
    Vec xty(p, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        const auto xr = x.row(r);
        for (std::size_t i = 0; i < p; ++i) {
            xty[i] += xr[i] * y[r];
            for (std::size_t j = 0; j < p; ++j) xtx(i, j) += xr[i] * xr[j];
        }
    }

    const Vec eig = symmetric_eigenvalues(xtx);
    const double lmax = eig.back();
    const double lmin = std::max(eig.front(), 0.0);
    if (!(lmax > 0.0) || std::sqrt(lmin / lmax) < 1e-12) {
        throw SingularSystem("solve_least_squares: design matrix is rank deficient");
    }
    return cholesky_solve(xtx, xty);
}

double r2_score(std::span<const double> y_true, std::span<const double> y_pred) {
    if (y_true.size() != y_pred.size() || y_true.size() < 2) {
        throw LengthMismatch("r2_score: need equal lengths >= 2");
    }
    double mean = 0.0;
    for (double v : y_true) mean += v;
    mean /= static_cast<double>(y_true.size());
    double ss_tot = 0.0;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        ss_tot += (y_true[i] - mean) * (y_true[i] - mean);
        ss_res += (y_true[i] - y_pred[i]) * (y_true[i] - y_pred[i]);
    }
    if (ss_tot < 1e-30) return 0.0;
    return 1.0 - ss_res / ss_tot;
}

}  // namespace hidlr
