#pragma once

// Context realization: given full-column-rank tokens X in R^{d x n} (d >= n)
// and a column-stochastic target P, build key/query maps whose attention
// context equals P exactly.
//
// Construction: with Xdag the left inverse of X, set W_k = Wt_k Xdag and
// W_q = Wt_q Xdag so that (W_k X)^T (W_q X) = Wt_k^T Wt_q =: Wt_kq, reducing
// the problem to choosing n x n logits with Softmax[Wt_kq / s] = P. Taking
// Wt_kq = s * log(P D0) for any positive diagonal D0 works because softmax
// normalizes each column: the per-column diagonal factor cancels. Equivalently
// exp(Wt_kq / s) = P * D with D the column sums of the left side, which is the
// self-consistency checked by verify_fixed_point.
//
// When d < n no exact realization exists in general; scalar_bottleneck_witness
// pins the canonical 1 x 2 counterexample where the best achievable max-abs
// residual is exactly 0.25, and low_rank_residual_search measures the same
// obstruction for rank-constrained key/query maps by direct minimization.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attnlab/decomp.hpp"
#include "attnlab/errors.hpp"
#include "attnlab/matrix.hpp"
#include "attnlab/rng.hpp"

namespace attnlab {

inline constexpr double kStochasticTol = 1e-12;
inline constexpr double kConditionWarn = 1e6;

// Validated column-stochastic square matrix: entries strictly positive (the
// log construction needs them), columns summing to 1 within kStochasticTol.
class ContextMatrix {
public:
    explicit ContextMatrix(Matrix p) : p_(std::move(p)) {
        if (p_.rows() != p_.cols() || p_.rows() == 0)
            throw NotStochastic("context matrix must be square and nonempty, got " +
                                Matrix::shape_str(p_));
        for (std::size_t j = 0; j < p_.cols(); ++j) {
            double colsum = 0.0;
            for (std::size_t i = 0; i < p_.rows(); ++i) {
                const double v = p_(i, j);
                if (!(v > kStochasticTol))
                    throw NotStochastic("entry (" + std::to_string(i) + "," + std::to_string(j) +
                                        ") = " + std::to_string(v) + " not strictly positive");
                colsum += v;
            }
            if (std::abs(colsum - 1.0) > kStochasticTol)
                throw NotStochastic("column " + std::to_string(j) + " sums to " +
                                    std::to_string(colsum));
        }
    }

    const Matrix& p() const { return p_; }
    std::size_t n() const { return p_.rows(); }

private:
    Matrix p_;
};

struct RealizationResult {
    Matrix w_k, w_q; // d x d
    double residual_max_abs = 0.0;
    std::vector<double> d0_used;
    double condition_estimate = 0.0;
    bool ill_conditioned = false;
};

// Logits Wt_kq = scale * log(P * diag(d0)).
inline Matrix build_w_kq_tilde(const ContextMatrix& p, std::span<const double> d0, double scale) {
    const std::size_t n = p.n();
    if (d0.size() != n)
        throw DimensionMismatch("d0 has " + std::to_string(d0.size()) + " entries for n = " +
                                std::to_string(n));
    Matrix scaled = p.p();
    for (std::size_t j = 0; j < n; ++j) {
        if (!(d0[j] > 0.0)) throw InvalidConfig("d0 entries must be positive");
        for (std::size_t i = 0; i < n; ++i) scaled(i, j) *= d0[j];
    }
    Matrix out = elementwise_log(scaled);
    out *= scale;
    return out;
}

inline RealizationResult realize_context(const Matrix& x, const ContextMatrix& p,
                                         std::optional<std::vector<double>> d0 = std::nullopt) {
    const std::size_t d = x.rows(), n = x.cols();
    if (n != p.n())
        throw DimensionMismatch("x has " + std::to_string(n) + " tokens, target is " +
                                std::to_string(p.n()) + "x" + std::to_string(p.n()));
    if (d < n)
        throw DimensionTooSmall("need embedding dim >= token count for exact realization, got d=" +
                                std::to_string(d) + " n=" + std::to_string(n));
    if (numerical_rank(x) < n)
        throw RankDeficient("token matrix has rank below " + std::to_string(n));

    RealizationResult res;
    res.d0_used = d0.value_or(std::vector<double>(n, 1.0));
    const double scale = std::sqrt(static_cast<double>(d));
    const Matrix wt_kq = build_w_kq_tilde(p, res.d0_used, scale);

    // Split Wt_kq across the two factors: Wt_k^T Wt_q = Wt_kq with
    // Wt_k = [I_n; 0] (d x n padded) and Wt_q = [Wt_kq; 0].
    const Matrix xdag = left_inverse(x); // n x d
    res.condition_estimate = condition_proxy(x);
    res.ill_conditioned = !(res.condition_estimate < kConditionWarn);

    res.w_k = Matrix(d, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) res.w_k(i, j) = xdag(i, j);
    res.w_q = Matrix(d, d);
    const Matrix wq_top = matmul(wt_kq, xdag); // n x d
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) res.w_q(i, j) = wq_top(i, j);

    // Certify by forward evaluation.
    Matrix logits = matmul_at_b(matmul(res.w_k, x), matmul(res.w_q, x));
    logits *= 1.0 / scale;
    res.residual_max_abs = max_abs_diff(softmax_columns(logits), p.p());
    return res;
}

// Max-abs self-consistency residual of exp(Wt_kq / scale) = P * D where D is
// diagonal with D_jj = sum of column j of the left-hand side.
inline double verify_fixed_point(const Matrix& wt_kq, const ContextMatrix& p, double scale) {
    const std::size_t n = p.n();
    if (wt_kq.rows() != n || wt_kq.cols() != n)
        throw DimensionMismatch("logits are " + Matrix::shape_str(wt_kq) + " for n = " +
                                std::to_string(n));
    if (!(scale > 0.0)) throw InvalidConfig("scale must be positive");
    Matrix e(n, n);
    std::vector<double> colsum(n, 0.0);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < n; ++i) {
            e(i, j) = std::exp(wt_kq(i, j) / scale);
            colsum[j] += e(i, j);
        }
    double res = 0.0;
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < n; ++i)
            res = std::max(res, std::abs(e(i, j) - p.p()(i, j) * colsum[j]));
    return res;
}

// Best max-abs residual over 2x2 contexts reachable from tokens X = [1, 0]
// with scalar key/query maps: the attainable logits are [[w, 0], [0, 0]], so
// the second context column is pinned at (1/2, 1/2) while the target column
// is (3/4, 1/4). Exhaustive scalar grid search certifies the floor of 1/4.
struct ScalarWitness {
    double min_residual = 0.0;
    double argmin_w = 0.0;
};

inline ScalarWitness scalar_grid_search(const Matrix& target, double step) {
    if (target.rows() != 2 || target.cols() != 2)
        throw DimensionMismatch("scalar grid search needs a 2x2 target, got " +
                                Matrix::shape_str(target));
    const long steps_half = std::lround(50.0 / step);
    ScalarWitness best;
    double best_col1 = 0.0;
    bool first = true;
    for (long k = 0; k <= 2 * steps_half; ++k) {
        const double w = static_cast<double>(k - steps_half) * step;
        Matrix logits = Matrix::from_rows({{w, 0.0}, {0.0, 0.0}});
        const Matrix ctx = softmax_columns(logits);
        const double residual = max_abs_diff(ctx, target);
        // tie-break on the first-column-only residual, so the flat region
        // where only the second column misses resolves to the centre
        double col1 = 0.0;
        for (std::size_t i = 0; i < 2; ++i) col1 = std::max(col1, std::abs(ctx(i, 0) - target(i, 0)));
        if (first || residual < best.min_residual - 1e-15 ||
            (std::abs(residual - best.min_residual) <= 1e-15 && col1 < best_col1)) {
            best.min_residual = residual;
            best.argmin_w = w;
            best_col1 = col1;
            first = false;
        }
    }
    return best;
}

inline ScalarWitness scalar_bottleneck_witness() {
    const Matrix target = Matrix::from_rows({{0.5, 0.75}, {0.5, 0.25}});
    return scalar_grid_search(target, 1e-3);
}

// Gradient descent over rank-constrained key/query maps W_k, W_q in
// R^{d_proj x d}, minimizing the squared softmax mismatch against P; returns
// the best max-abs residual seen across restarts. Measures how much of the
// target survives the rank bottleneck; with d_proj >= n and well-conditioned
// X it should drive the residual toward zero.
inline double low_rank_residual_search(const Matrix& x, const ContextMatrix& p, std::size_t d_proj,
                                       std::size_t restarts, std::size_t steps, std::uint64_t seed,
                                       double lr = 0.05) {
    const std::size_t d = x.rows(), n = x.cols();
    if (n != p.n())
        throw DimensionMismatch("x has " + std::to_string(n) + " tokens, target is " +
                                std::to_string(p.n()) + "x" + std::to_string(p.n()));
    if (d_proj == 0) throw InvalidConfig("d_proj must be positive");
    const double scale = std::sqrt(static_cast<double>(d_proj));
    const double init_b = 1.0 / std::sqrt(static_cast<double>(d));
    const Rng base(seed);

    double best = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < restarts; ++r) {
        Rng rng = base.split(r);
        Matrix w_k = rng.uniform_matrix(d_proj, d, -init_b, init_b);
        Matrix w_q = rng.uniform_matrix(d_proj, d, -init_b, init_b);
        for (std::size_t t = 0; t < steps; ++t) {
            const Matrix k = matmul(w_k, x);
            const Matrix q = matmul(w_q, x);
            Matrix logits = matmul_at_b(k, q);
            logits *= 1.0 / scale;
            const Matrix ctx = softmax_columns(logits);
            best = std::min(best, max_abs_diff(ctx, p.p()));

            // d(sum of squares)/dctx = 2 (ctx - P), then softmax columns back
            Matrix g_logits(n, n);
            for (std::size_t j = 0; j < n; ++j) {
                double dot = 0.0;
                for (std::size_t i = 0; i < n; ++i) dot += 2.0 * (ctx(i, j) - p.p()(i, j)) * ctx(i, j);
                for (std::size_t i = 0; i < n; ++i)
                    g_logits(i, j) = ctx(i, j) * (2.0 * (ctx(i, j) - p.p()(i, j)) - dot);
            }
            Matrix g_k = matmul_a_bt(q, g_logits);
            Matrix g_q = matmul(k, g_logits);
            g_k *= 1.0 / scale;
            g_q *= 1.0 / scale;
            w_k.add_scaled(matmul_a_bt(g_k, x), -lr);
            w_q.add_scaled(matmul_a_bt(g_q, x), -lr);
            if (!w_k.all_finite() || !w_q.all_finite())
                throw Diverged("low_rank_residual_search: restart " + std::to_string(r) + " step " +
                               std::to_string(t));
        }
        // residual at the final iterate too
        Matrix logits = matmul_at_b(matmul(w_k, x), matmul(w_q, x));
        logits *= 1.0 / scale;
        best = std::min(best, max_abs_diff(softmax_columns(logits), p.p()));
    }
    return best;
}

} // namespace attnlab
