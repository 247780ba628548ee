#pragma once

// Factorizations: Householder QR with column pivoting (rank, left inverse,
// condition proxy) and a cyclic Jacobi eigensolver for symmetric matrices.
// Sizes in this project stay below ~64, so clarity wins over blocking.

#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include "attnlab/errors.hpp"
#include "attnlab/matrix.hpp"

namespace attnlab {

inline constexpr double kRankTol = 1e-10; // relative to the largest pivot

struct QrPivoted {
    // A * P = Q * R with P the permutation sending column k to original
    // column perm[k]. Reflectors are stored padded to full length; R is
    // kxc upper triangular, k = min(rows, cols).
    std::vector<std::vector<double>> reflectors;
    std::vector<double> betas;
    std::vector<std::size_t> perm;
    Matrix r;
    std::size_t rows = 0, cols = 0;

    // y <- Q^T y for a length-`rows` vector.
    void apply_qt(std::vector<double>& y) const {
        for (std::size_t k = 0; k < reflectors.size(); ++k) {
            if (betas[k] == 0.0) continue;
            const auto& v = reflectors[k];
            double dot = 0.0;
            for (std::size_t i = k; i < rows; ++i) dot += v[i] * y[i];
            dot *= betas[k];
            for (std::size_t i = k; i < rows; ++i) y[i] -= dot * v[i];
        }
    }
};

inline QrPivoted qr_col_pivoted(const Matrix& a) {
    QrPivoted f;
    f.rows = a.rows();
    f.cols = a.cols();
    const std::size_t kmax = std::min(f.rows, f.cols);
    Matrix w = a;
    f.perm.resize(f.cols);
    std::iota(f.perm.begin(), f.perm.end(), std::size_t{0});

    for (std::size_t k = 0; k < kmax; ++k) {
        // Pivot: bring the remaining column of largest norm to position k.
        std::size_t best = k;
        double best_norm = -1.0;
        for (std::size_t j = k; j < f.cols; ++j) {
            double s = 0.0;
            for (std::size_t i = k; i < f.rows; ++i) s += w(i, j) * w(i, j);
            if (s > best_norm) {
                best_norm = s;
                best = j;
            }
        }
        if (best != k) {
            for (std::size_t i = 0; i < f.rows; ++i) std::swap(w(i, k), w(i, best));
            std::swap(f.perm[k], f.perm[best]);
        }

        std::vector<double> v(f.rows, 0.0);
        double normx = std::sqrt(best_norm);
        double beta = 0.0;
        if (normx > 0.0) {
            const double x0 = w(k, k);
            const double alpha = x0 >= 0.0 ? -normx : normx;
            double vnorm_sq = 0.0;
            v[k] = x0 - alpha;
            vnorm_sq += v[k] * v[k];
            for (std::size_t i = k + 1; i < f.rows; ++i) {
                v[i] = w(i, k);
                vnorm_sq += v[i] * v[i];
            }
            if (vnorm_sq > 0.0) {
                beta = 2.0 / vnorm_sq;
                for (std::size_t j = k; j < f.cols; ++j) {
                    double dot = 0.0;
                    for (std::size_t i = k; i < f.rows; ++i) dot += v[i] * w(i, j);
                    dot *= beta;
                    for (std::size_t i = k; i < f.rows; ++i) w(i, j) -= dot * v[i];
                }
            }
        }
        f.reflectors.push_back(std::move(v));
        f.betas.push_back(beta);
    }

    f.r = Matrix(kmax, f.cols);
    for (std::size_t i = 0; i < kmax; ++i)
        for (std::size_t j = i; j < f.cols; ++j) f.r(i, j) = w(i, j);
    return f;
}

// Rank = number of pivoted-QR diagonal entries above tol * |largest pivot|.
inline std::size_t numerical_rank(const Matrix& m, double tol = kRankTol) {
    if (m.rows() == 0 || m.cols() == 0) return 0;
    const QrPivoted f = qr_col_pivoted(m);
    const std::size_t kmax = std::min(m.rows(), m.cols());
    const double lead = std::abs(f.r(0, 0));
    if (lead == 0.0) return 0;
    std::size_t rank = 0;
    for (std::size_t i = 0; i < kmax; ++i)
        if (std::abs(f.r(i, i)) > tol * lead) ++rank;
    return rank;
}

// |R_00| / |R_kk|: cheap condition proxy from the pivoted diagonal.
inline double condition_proxy(const Matrix& m) {
    if (m.rows() == 0 || m.cols() == 0) return 0.0;
    const QrPivoted f = qr_col_pivoted(m);
    const std::size_t kmax = std::min(m.rows(), m.cols());
    const double lead = std::abs(f.r(0, 0));
    const double tail = std::abs(f.r(kmax - 1, kmax - 1));
    if (tail == 0.0) return std::numeric_limits<double>::infinity();
    return lead / tail;
}

// Moore-Penrose left inverse of a full-column-rank x (rows >= cols), computed
// as P * R^{-1} * Q^T from the pivoted factorization. Satisfies pinv(x) * x = I.
inline Matrix left_inverse(const Matrix& x, double tol = kRankTol) {
    const std::size_t d = x.rows(), n = x.cols();
    if (d < n)
        throw DimensionMismatch("left_inverse: need rows >= cols, got " + Matrix::shape_str(x));
    const QrPivoted f = qr_col_pivoted(x);
    const double lead = std::abs(f.r(0, 0));
    for (std::size_t i = 0; i < n; ++i)
        if (std::abs(f.r(i, i)) <= tol * lead || lead == 0.0)
            throw RankDeficient("left_inverse: column rank below " + std::to_string(n) +
                                " at relative tolerance " + std::to_string(tol));

    // Z = R^{-1} Q^T, one basis vector at a time.
    Matrix z(n, d);
    std::vector<double> y(d);
    for (std::size_t col = 0; col < d; ++col) {
        std::fill(y.begin(), y.end(), 0.0);
        y[col] = 1.0;
        f.apply_qt(y);
        for (std::size_t i = n; i-- > 0;) {
            double s = y[i];
            for (std::size_t j = i + 1; j < n; ++j) s -= f.r(i, j) * z(j, col);
            z(i, col) = s / f.r(i, i);
        }
    }
    Matrix out(n, d);
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t col = 0; col < d; ++col) out(f.perm[k], col) = z(k, col);
    return out;
}

struct SymmetricEig {
    std::vector<double> values;  // unsorted (Jacobi order)
    Matrix vectors;              // columns; a = V diag(values) V^T
};

// Cyclic Jacobi sweeps; fine for the small symmetric matrices used here.
inline SymmetricEig jacobi_eigh(const Matrix& a, double tol = 1e-13, std::size_t max_sweeps = 100) {
    if (a.rows() != a.cols()) throw DimensionMismatch("jacobi_eigh: " + Matrix::shape_str(a));
    const std::size_t n = a.rows();
    Matrix w = sym_part(a); // symmetrize defensively
    Matrix v = Matrix::identity(n);
    const double scale = norms(w).frobenius;
    if (n <= 1 || scale == 0.0) {
        SymmetricEig e;
        e.vectors = v;
        e.values.resize(n);
        for (std::size_t i = 0; i < n; ++i) e.values[i] = w(i, i);
        return e;
    }

    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * w(p, q) * w(p, q);
        if (std::sqrt(off) <= tol * scale) break;

        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = w(p, q);
                if (std::abs(apq) <= 1e-300) continue;
                const double tau = (w(q, q) - w(p, p)) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (std::size_t i = 0; i < n; ++i) {
                    const double wip = w(i, p), wiq = w(i, q);
                    w(i, p) = c * wip - s * wiq;
                    w(i, q) = s * wip + c * wiq;
                }
                for (std::size_t j = 0; j < n; ++j) {
                    const double wpj = w(p, j), wqj = w(q, j);
                    w(p, j) = c * wpj - s * wqj;
                    w(q, j) = s * wpj + c * wqj;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vip = v(i, p), viq = v(i, q);
                    v(i, p) = c * vip - s * viq;
                    v(i, q) = s * vip + c * viq;
                }
            }
    }

    SymmetricEig e;
    e.vectors = v;
    e.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) e.values[i] = w(i, i);
    return e;
}

} // namespace attnlab
