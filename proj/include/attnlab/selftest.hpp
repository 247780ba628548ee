#pragma once

// Deterministic invariant suite behind the `selftest` CLI subcommand: one
// line per check, overall pass/fail. Mirrors the structural invariants the
// unit tests pin down, at sizes small enough to finish in seconds.

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "attnlab/attention.hpp"
#include "attnlab/csv.hpp"
#include "attnlab/decomp.hpp"
#include "attnlab/experiments.hpp"
#include "attnlab/matrix.hpp"
#include "attnlab/realization.hpp"
#include "attnlab/rng.hpp"
#include "attnlab/separation.hpp"

namespace attnlab::selftest {

namespace detail {

inline void require(bool ok, const std::string& what) {
    if (!ok) throw Error("check failed: " + what);
}

inline Matrix permute_columns(const Matrix& x, const std::vector<std::size_t>& perm) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t j = 0; j < x.cols(); ++j)
        for (std::size_t i = 0; i < x.rows(); ++i) out(i, j) = x(i, perm[j]);
    return out;
}

} // namespace detail

inline bool run_all(std::ostream& os) {
    using detail::require;
    struct Check {
        std::string name;
        std::function<void()> fn;
    };

    const std::vector<Check> checks = {
        {"softmax-columns-stochastic",
         [] {
             Rng rng(11);
             const Matrix m = rng.uniform_matrix(16, 16, -1e3, 1e3);
             const Matrix s = softmax_columns(m);
             for (std::size_t j = 0; j < s.cols(); ++j) {
                 double colsum = 0.0;
                 for (std::size_t i = 0; i < s.rows(); ++i) {
                     require(s(i, j) >= 0.0, "negative softmax entry");
                     colsum += s(i, j);
                 }
                 require(std::abs(colsum - 1.0) <= 1e-12, "column sum off by more than 1e-12");
             }
         }},
        {"softmax-shift-invariance",
         [] {
             Rng rng(12);
             const Matrix m = rng.uniform_matrix(8, 8, -5.0, 5.0);
             Matrix shifted = m;
             for (std::size_t i = 0; i < 8; ++i) shifted(i, 3) += 700.0;
             require(max_abs_diff(softmax_columns(m), softmax_columns(shifted)) <= 1e-12,
                     "shifting one column changed the softmax");
         }},
        {"left-inverse-identity",
         [] {
             Rng rng(13);
             const Matrix x = rng.normal_matrix(8, 5);
             const Matrix xd = left_inverse(x);
             require(max_abs_diff(matmul(xd, x), Matrix::identity(5)) <= 1e-10,
                     "pinv(x) * x misses the identity");
         }},
        {"rank-of-low-rank-product",
         [] {
             Rng rng(14);
             const Matrix a = rng.normal_matrix(3, 8), b = rng.normal_matrix(3, 8);
             require(numerical_rank(matmul_at_b(a, b)) == 3, "a^T b should have rank 3");
         }},
        {"jacobi-eigendecomposition",
         [] {
             Rng rng(15);
             const Matrix s = sym_part(rng.normal_matrix(7, 7));
             const SymmetricEig e = jacobi_eigh(s);
             Matrix rec(7, 7);
             for (std::size_t k = 0; k < 7; ++k)
                 for (std::size_t i = 0; i < 7; ++i)
                     for (std::size_t j = 0; j < 7; ++j)
                         rec(i, j) += e.values[k] * e.vectors(i, k) * e.vectors(j, k);
             require(max_abs_diff(rec, s) <= 1e-10, "eigendecomposition does not reconstruct");
         }},
        {"context-realization-exact",
         [] {
             Rng rng(16);
             const Matrix x = rng.normal_matrix(12, 6);
             const ContextMatrix p(softmax_columns(rng.normal_matrix(6, 6)));
             const RealizationResult r = realize_context(x, p);
             require(r.residual_max_abs < 1e-8, "realization residual above 1e-8");
         }},
        {"realization-fixed-point",
         [] {
             Rng rng(17);
             const ContextMatrix p(softmax_columns(rng.normal_matrix(5, 5)));
             const std::vector<double> d0(5, 1.0);
             const double scale = std::sqrt(10.0);
             require(verify_fixed_point(build_w_kq_tilde(p, d0, scale), p, scale) <= 1e-12,
                     "fixed-point residual above 1e-12");
         }},
        {"scalar-bottleneck-floor",
         [] {
             const ScalarWitness w = scalar_bottleneck_witness();
             require(std::abs(w.min_residual - 0.25) <= 1e-9, "scalar floor is not 1/4");
             require(w.argmin_w == 0.0, "argmin not at w = 0");
         }},
        {"attention-permutation-equivariance",
         [] {
             Rng rng(18);
             MultiHeadParams p = MultiHeadParams::random(AttentionMode::Fixed, 6, 3, 4, rng);
             const Matrix x = rng.normal_matrix(6, 5);
             const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
             const Matrix lhs = multi_head_forward(detail::permute_columns(x, perm), p);
             const Matrix rhs = detail::permute_columns(multi_head_forward(x, p), perm);
             require(max_abs_diff(lhs, rhs) <= 1e-10, "token permutation does not commute");
         }},
        {"attention-block-sum-form",
         [] {
             Rng rng(19);
             MultiHeadParams p = MultiHeadParams::random(AttentionMode::Fixed, 6, 3, 4, rng);
             const Matrix x = rng.normal_matrix(6, 5);
             Matrix by_sum(6, 5);
             for (std::size_t i = 0; i < p.h; ++i) {
                 const SingleHeadResult head = single_head_forward(x, p.heads[i], p.softmax_scale());
                 Matrix w_o_block(6, p.d_p);
                 for (std::size_t r = 0; r < 6; ++r)
                     for (std::size_t c = 0; c < p.d_p; ++c) w_o_block(r, c) = p.w_o(r, i * p.d_p + c);
                 by_sum += matmul(w_o_block, head.output);
             }
             require(max_abs_diff(by_sum, multi_head_forward(x, p)) <= 1e-12,
                     "per-head sum disagrees with concatenated form");
         }},
        {"fixed-mode-contains-standard",
         [] {
             Rng rng(20);
             MultiHeadParams p = MultiHeadParams::random(AttentionMode::Standard, 8, 4, 2, rng);
             const Matrix x = rng.normal_matrix(8, 6);
             const Matrix ref = multi_head_forward(x, p);
             for (std::size_t target : {std::size_t{2}, std::size_t{3}, std::size_t{5}}) {
                 const MultiHeadParams fixed = embed_multihead_as_fixed(p, target);
                 require(max_abs_diff(multi_head_forward(x, fixed), ref) <= 1e-10,
                         "embedding at d_p=" + std::to_string(target) + " changed the map");
             }
         }},
        {"backward-matches-finite-differences",
         [] {
             Rng rng(21);
             MultiHeadParams p = MultiHeadParams::random(AttentionMode::Standard, 6, 2, 3, rng);
             const Matrix x = rng.normal_matrix(6, 4);
             const Matrix upstream = rng.normal_matrix(6, 4);
             const MultiHeadGradients g = multi_head_backward(x, p, upstream);
             // spot-check a handful of coordinates of <upstream, f(x)>
             auto objective = [&](const MultiHeadParams& q) {
                 const Matrix out = multi_head_forward(x, q);
                 double s = 0.0;
                 for (std::size_t i = 0; i < out.rows(); ++i)
                     for (std::size_t j = 0; j < out.cols(); ++j) s += upstream(i, j) * out(i, j);
                 return s;
             };
             const double eps = 1e-5;
             for (const auto& [pick_r, pick_c] : std::vector<std::pair<std::size_t, std::size_t>>{
                      {0, 0}, {1, 3}, {2, 5}}) {
                 MultiHeadParams plus = p, minus = p;
                 plus.heads[0].w_q(pick_r, pick_c) += eps;
                 minus.heads[0].w_q(pick_r, pick_c) -= eps;
                 const double fd = (objective(plus) - objective(minus)) / (2.0 * eps);
                 const double an = g.params.heads[0].w_q(pick_r, pick_c);
                 require(std::abs(fd - an) <= 1e-4 * std::max({std::abs(fd), std::abs(an), 1e-3}),
                         "w_q gradient disagrees with finite differences");
             }
         }},
        {"separation-witnesses-certified",
         [] {
             const SeparationTarget t = build_target_skew_u(4, 4, 2, 2, 99);
             const SeparationSummary s = verify_separation(t, 5, 123);
             require(s.min_gap > 1e-8, "witness gap at or below 1e-8");
             require(s.case1_count >= 5, "random competitors should classify as Case1");
             require(s.case2_count >= 1 && s.case3_count >= 1,
                     "engineered adversaries missing a case");
         }},
        {"training-deterministic",
         [] {
             ExperimentConfig cfg;
             cfg.task = TaskKind::ContextFit;
             cfg.d = 8;
             cfg.n = 4;
             cfg.d_p = 4;
             cfg.steps = 200;
             cfg.batch = 1;
             cfg.seed = 5;
             cfg.eval_every = 50;
             const ExperimentData data = gen_context_fit(cfg.seed, cfg.n, cfg.d, 1);
             const TrainReport a = train(cfg, data);
             const TrainReport b = train(cfg, data);
             require(a.final_eval == b.final_eval, "identical runs diverge bitwise");
             require(a.losses.size() == b.losses.size(), "loss traces differ in length");
         }},
        {"csv-round-trip-bit-exact",
         [] {
             Rng rng(22);
             Matrix m = rng.normal_matrix(5, 7);
             m(0, 0) = 1e-300;
             m(1, 1) = -3.0e17;
             m(2, 2) = 0.1;
             const Matrix back = matrix_from_csv_string(matrix_to_csv_string(m));
             require(back.same_shape(m), "round trip changed the shape");
             for (std::size_t i = 0; i < m.rows(); ++i)
                 for (std::size_t j = 0; j < m.cols(); ++j)
                     require(back(i, j) == m(i, j), "round trip changed a value");
         }},
    };

    bool all_ok = true;
    for (const auto& check : checks) {
        try {
            check.fn();
            os << "ok " << check.name << "\n";
        } catch (const std::exception& e) {
            all_ok = false;
            os << "FAIL " << check.name << ": " << e.what() << "\n";
        }
    }
    os << (all_ok ? "selftest passed" : "selftest FAILED") << " (" << checks.size() << " checks)\n";
    return all_ok;
}

} // namespace attnlab::selftest
