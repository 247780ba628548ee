#pragma once

// Dot-product attention over column-token inputs X in R^{d x n}.
//
// A single head with projections (w_q, w_k, w_v), each d_p x d, computes
//     context = Softmax[(w_k X)^T (w_q X) / scale]   (columnwise softmax)
//     head    = (w_v X) * context                    (d_p x n)
// The multi-head map concatenates heads row-wise and applies w_o (d x h*d_p).
// Two modes share this code path and differ only in head size and scale:
//   Standard: d_p = d/h, scale = sqrt(d/h)
//   Fixed:    d_p free,  scale = sqrt(d_p)
// The block wrapper adds the residual connection and columnwise layer norm.
// Backward passes are closed-form (no tape); derivative formulas are noted
// inline where they are not obvious.

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "attnlab/errors.hpp"
#include "attnlab/matrix.hpp"
#include "attnlab/rng.hpp"

namespace attnlab {

enum class AttentionMode { Standard, Fixed };

inline std::string to_string(AttentionMode m) {
    return m == AttentionMode::Standard ? "Standard" : "Fixed";
}

struct HeadParams {
    Matrix w_q, w_k, w_v; // each d_p x d
};

struct MultiHeadParams {
    AttentionMode mode = AttentionMode::Standard;
    std::size_t d = 0, h = 0, d_p = 0;
    std::optional<std::size_t> n_hint; // sequence length this was built for, if any
    std::vector<HeadParams> heads;
    Matrix w_o; // d x h*d_p

    double softmax_scale() const {
        return std::sqrt(static_cast<double>(mode == AttentionMode::Standard ? d / h : d_p));
    }

    void validate() const {
        if (d == 0 || h == 0 || d_p == 0)
            throw InvalidConfig("attention dims must be positive, got d=" + std::to_string(d) +
                                " h=" + std::to_string(h) + " d_p=" + std::to_string(d_p));
        if (mode == AttentionMode::Standard && (d % h != 0 || d_p != d / h))
            throw InvalidConfig("Standard mode needs h | d and d_p = d/h, got d=" + std::to_string(d) +
                                " h=" + std::to_string(h) + " d_p=" + std::to_string(d_p));
        if (heads.size() != h)
            throw DimensionMismatch("expected " + std::to_string(h) + " heads, got " +
                                    std::to_string(heads.size()));
        for (const auto& hp : heads)
            for (const Matrix* w : {&hp.w_q, &hp.w_k, &hp.w_v})
                if (w->rows() != d_p || w->cols() != d)
                    throw DimensionMismatch("head projection is " + Matrix::shape_str(*w) + ", expected " +
                                            std::to_string(d_p) + "x" + std::to_string(d));
        if (w_o.rows() != d || w_o.cols() != h * d_p)
            throw DimensionMismatch("w_o is " + Matrix::shape_str(w_o) + ", expected " + std::to_string(d) +
                                    "x" + std::to_string(h * d_p));
    }

    // Uniform [-1/sqrt(d), 1/sqrt(d)] entries, the init used by training.
    static MultiHeadParams random(AttentionMode mode, std::size_t d, std::size_t h, std::size_t d_p,
                                  Rng& rng) {
        MultiHeadParams p;
        p.mode = mode;
        p.d = d;
        p.h = h;
        p.d_p = d_p;
        const double b = 1.0 / std::sqrt(static_cast<double>(d));
        for (std::size_t i = 0; i < h; ++i)
            p.heads.push_back({rng.uniform_matrix(d_p, d, -b, b), rng.uniform_matrix(d_p, d, -b, b),
                               rng.uniform_matrix(d_p, d, -b, b)});
        p.w_o = rng.uniform_matrix(d, h * d_p, -b, b);
        p.validate();
        return p;
    }
};

struct SingleHeadResult {
    Matrix output;  // d_p x n
    Matrix context; // n x n, columns sum to 1
};

inline SingleHeadResult single_head_forward(const Matrix& x, const HeadParams& hp, double scale) {
    const Matrix k = matmul(hp.w_k, x);
    const Matrix q = matmul(hp.w_q, x);
    const Matrix v = matmul(hp.w_v, x);
    Matrix logits = matmul_at_b(k, q);
    logits *= 1.0 / scale;
    SingleHeadResult r;
    r.context = softmax_columns(logits);
    r.output = matmul(v, r.context);
    return r;
}

namespace detail {

inline void require_input(const Matrix& x, const MultiHeadParams& p, const char* where) {
    if (x.rows() != p.d)
        throw DimensionMismatch(std::string(where) + ": input is " + Matrix::shape_str(x) +
                                ", expected " + std::to_string(p.d) + " rows");
    if (x.cols() == 0) throw DimensionMismatch(std::string(where) + ": input has no columns");
}

} // namespace detail

// Concatenated-heads formulation: w_o * vstack(head_1, ..., head_h). Equal to
// the per-head sum of w_o^i * head_i; the sum form is covered by tests.
inline Matrix multi_head_forward(const Matrix& x, const MultiHeadParams& p) {
    p.validate();
    detail::require_input(x, p, "multi_head_forward");
    const double scale = p.softmax_scale();
    const std::size_t n = x.cols();
    Matrix stacked(p.h * p.d_p, n);
    for (std::size_t i = 0; i < p.h; ++i) {
        const SingleHeadResult head = single_head_forward(x, p.heads[i], scale);
        for (std::size_t r = 0; r < p.d_p; ++r)
            for (std::size_t c = 0; c < n; ++c) stacked(i * p.d_p + r, c) = head.output(r, c);
    }
    return matmul(p.w_o, stacked);
}

struct LayerNormParams {
    std::vector<double> gain, bias;
    double epsilon = 1e-6;

    static LayerNormParams identity(std::size_t d) {
        LayerNormParams p;
        p.gain.assign(d, 1.0);
        p.bias.assign(d, 0.0);
        return p;
    }
};

// Columnwise: normalize each token to zero mean / unit variance over the d
// coordinates, then apply the affine gain/bias.
inline Matrix layer_norm_columns(const Matrix& x, const LayerNormParams& ln) {
    const std::size_t d = x.rows(), n = x.cols();
    if (ln.gain.size() != d || ln.bias.size() != d)
        throw DimensionMismatch("layer norm params sized " + std::to_string(ln.gain.size()) +
                                " for input with " + std::to_string(d) + " rows");
    Matrix out(d, n);
    for (std::size_t j = 0; j < n; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < d; ++i) mean += x(i, j);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double c = x(i, j) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + ln.epsilon);
        for (std::size_t i = 0; i < d; ++i)
            out(i, j) = ln.gain[i] * ((x(i, j) - mean) * inv) + ln.bias[i];
    }
    return out;
}

struct LayerNormGradients {
    Matrix x;
    std::vector<double> gain, bias;
};

inline LayerNormGradients layer_norm_backward(const Matrix& x, const LayerNormParams& ln,
                                              const Matrix& upstream) {
    const std::size_t d = x.rows(), n = x.cols();
    if (!x.same_shape(upstream))
        throw DimensionMismatch("layer_norm_backward: upstream " + Matrix::shape_str(upstream) +
                                " vs input " + Matrix::shape_str(x));
    LayerNormGradients g;
    g.x = Matrix(d, n);
    g.gain.assign(d, 0.0);
    g.bias.assign(d, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < d; ++i) mean += x(i, j);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double c = x(i, j) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + ln.epsilon);

        // zhat = (x - mean) * inv; ghat = upstream .* gain;
        // dx = inv * (ghat - mean(ghat) - zhat * mean(ghat .* zhat))
        double ghat_mean = 0.0, ghat_zhat_mean = 0.0;
        std::vector<double> zhat(d), ghat(d);
        for (std::size_t i = 0; i < d; ++i) {
            zhat[i] = (x(i, j) - mean) * inv;
            ghat[i] = upstream(i, j) * ln.gain[i];
            ghat_mean += ghat[i];
            ghat_zhat_mean += ghat[i] * zhat[i];
        }
        ghat_mean /= static_cast<double>(d);
        ghat_zhat_mean /= static_cast<double>(d);
        for (std::size_t i = 0; i < d; ++i) {
            g.x(i, j) = inv * (ghat[i] - ghat_mean - zhat[i] * ghat_zhat_mean);
            g.gain[i] += upstream(i, j) * zhat[i];
            g.bias[i] += upstream(i, j);
        }
    }
    return g;
}

// LN(X + MultiHead(X))
inline Matrix attention_block_forward(const Matrix& x, const MultiHeadParams& p,
                                      const LayerNormParams& ln) {
    return layer_norm_columns(x + multi_head_forward(x, p), ln);
}

struct MultiHeadGradients {
    MultiHeadParams params; // same shapes as the forward params, holding grads
    Matrix x;
};

// Gradient of <upstream, multi_head_forward(x)> with respect to every
// projection, w_o, and x. Softmax columns backpropagate as
//     dL/dlogits[:,j] = c_j .* (g_j - <g_j, c_j>)
// with c_j the context column and g_j the incoming gradient column; for
// logits = K^T Q / s the splits are dK = Q G^T / s and dQ = K G / s.
inline MultiHeadGradients multi_head_backward(const Matrix& x, const MultiHeadParams& p,
                                              const Matrix& upstream) {
    p.validate();
    detail::require_input(x, p, "multi_head_backward");
    if (upstream.rows() != p.d || upstream.cols() != x.cols())
        throw DimensionMismatch("multi_head_backward: upstream " + Matrix::shape_str(upstream) +
                                " vs output " + std::to_string(p.d) + "x" + std::to_string(x.cols()));
    const double scale = p.softmax_scale();
    const std::size_t n = x.cols();

    MultiHeadGradients g;
    g.params.mode = p.mode;
    g.params.d = p.d;
    g.params.h = p.h;
    g.params.d_p = p.d_p;
    g.params.w_o = Matrix(p.d, p.h * p.d_p);
    g.x = Matrix(p.d, n);

    Matrix stacked(p.h * p.d_p, n);
    std::vector<SingleHeadResult> head_results;
    std::vector<Matrix> ks, qs, vs;
    head_results.reserve(p.h);
    for (std::size_t i = 0; i < p.h; ++i) {
        ks.push_back(matmul(p.heads[i].w_k, x));
        qs.push_back(matmul(p.heads[i].w_q, x));
        vs.push_back(matmul(p.heads[i].w_v, x));
        SingleHeadResult head;
        Matrix logits = matmul_at_b(ks[i], qs[i]);
        logits *= 1.0 / scale;
        head.context = softmax_columns(logits);
        head.output = matmul(vs[i], head.context);
        for (std::size_t r = 0; r < p.d_p; ++r)
            for (std::size_t c = 0; c < n; ++c) stacked(i * p.d_p + r, c) = head.output(r, c);
        head_results.push_back(std::move(head));
    }

    g.params.w_o = matmul_a_bt(upstream, stacked); // d x (h*d_p)

    const Matrix g_stacked = matmul_at_b(p.w_o, upstream); // (h*d_p) x n
    for (std::size_t i = 0; i < p.h; ++i) {
        Matrix g_head(p.d_p, n);
        for (std::size_t r = 0; r < p.d_p; ++r)
            for (std::size_t c = 0; c < n; ++c) g_head(r, c) = g_stacked(i * p.d_p + r, c);

        const Matrix& ctx = head_results[i].context;
        const Matrix g_v_out = matmul_a_bt(g_head, ctx);      // dL/d(w_v x), d_p x n
        Matrix g_ctx = matmul_at_b(vs[i], g_head);            // n x n

        Matrix g_logits(n, n);
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t r = 0; r < n; ++r) dot += g_ctx(r, j) * ctx(r, j);
            for (std::size_t r = 0; r < n; ++r) g_logits(r, j) = ctx(r, j) * (g_ctx(r, j) - dot);
        }

        Matrix g_k = matmul_a_bt(qs[i], g_logits); // d_p x n, then / scale
        Matrix g_q = matmul(ks[i], g_logits);
        g_k *= 1.0 / scale;
        g_q *= 1.0 / scale;

        HeadParams hg;
        hg.w_k = matmul_a_bt(g_k, x);
        hg.w_q = matmul_a_bt(g_q, x);
        hg.w_v = matmul_a_bt(g_v_out, x);
        g.params.heads.push_back(std::move(hg));

        // input gradient: sum of the three projection paths
        Matrix gx = matmul_at_b(p.heads[i].w_k, g_k);
        gx += matmul_at_b(p.heads[i].w_q, g_q);
        gx += matmul_at_b(p.heads[i].w_v, g_v_out);
        g.x += gx;
    }
    return g;
}

// Express a Standard multi-head map inside the Fixed class with head size
// d_p_target >= d/h: pad w_k/w_v with zero rows, rescale w_q so the score
// scale change cancels, pad w_o with matching zero columns. Outputs agree
// with the original map exactly (up to roundoff in the rescale).
inline MultiHeadParams embed_multihead_as_fixed(const MultiHeadParams& p, std::size_t d_p_target) {
    p.validate();
    if (p.mode != AttentionMode::Standard)
        throw InvalidConfig("embed_multihead_as_fixed: source must be Standard mode");
    const std::size_t m = p.d / p.h;
    if (d_p_target < m)
        throw InvalidTarget("embed target head size " + std::to_string(d_p_target) +
                            " below source head size " + std::to_string(m));

    MultiHeadParams out;
    out.mode = AttentionMode::Fixed;
    out.d = p.d;
    out.h = p.h;
    out.d_p = d_p_target;
    out.n_hint = p.n_hint;
    const double rescale = std::sqrt(static_cast<double>(d_p_target) / static_cast<double>(m));
    for (std::size_t i = 0; i < p.h; ++i) {
        HeadParams hp;
        hp.w_k = Matrix(d_p_target, p.d);
        hp.w_q = Matrix(d_p_target, p.d);
        hp.w_v = Matrix(d_p_target, p.d);
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < p.d; ++c) {
                hp.w_k(r, c) = p.heads[i].w_k(r, c);
                hp.w_q(r, c) = rescale * p.heads[i].w_q(r, c);
                hp.w_v(r, c) = p.heads[i].w_v(r, c);
            }
        out.heads.push_back(std::move(hp));
    }
    out.w_o = Matrix(p.d, p.h * d_p_target);
    for (std::size_t i = 0; i < p.h; ++i)
        for (std::size_t r = 0; r < p.d; ++r)
            for (std::size_t c = 0; c < m; ++c) out.w_o(r, i * d_p_target + c) = p.w_o(r, i * m + c);
    out.validate();
    return out;
}

} // namespace attnlab
