#pragma once

// Desk-scale training harness probing the head-size bottleneck empirically.
//
// Two tasks:
//   ContextFit      fit one (X, P) instance with a single rank-d_p key/query
//                   pair, minimizing the squared softmax mismatch. With
//                   d_p >= n this is realizable (the constructive algorithm
//                   provides exact parameters); with d_p < n a loss floor
//                   appears.
//   TeacherStudent  regress the output of a frozen fixed-head-size attention
//                   block from random tokens with a student block of varying
//                   mode/head count.
//
// Training is plain full-batch-free SGD/Adam over explicit parameter lists
// with closed-form gradients; everything is single-threaded and seeded, so a
// report is a pure function of its config and data.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "attnlab/attention.hpp"
#include "attnlab/csv.hpp"
#include "attnlab/decomp.hpp"
#include "attnlab/errors.hpp"
#include "attnlab/matrix.hpp"
#include "attnlab/realization.hpp"
#include "attnlab/rng.hpp"

namespace attnlab {

enum class TaskKind { ContextFit, TeacherStudent };
enum class OptKind { Adam, Sgd };

inline std::string to_string(TaskKind t) {
    return t == TaskKind::ContextFit ? "ContextFit" : "TeacherStudent";
}
inline std::string to_string(OptKind o) { return o == OptKind::Adam ? "Adam" : "SGD"; }

struct OptimizerConfig {
    OptKind kind = OptKind::Adam;
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
};

struct ExperimentConfig {
    TaskKind task = TaskKind::ContextFit;
    AttentionMode mode = AttentionMode::Fixed;
    std::size_t d = 0, h = 1, n = 0, d_p = 0;
    bool use_ffn = false;
    std::size_t ffn_width = 0;
    std::size_t steps = 0, batch = 1;
    OptimizerConfig optimizer;
    std::uint64_t seed = 0;
    std::size_t eval_every = 100;

    void validate() const {
        if (d == 0 || n == 0 || d_p == 0 || h == 0)
            throw InvalidConfig("dims must be positive: d=" + std::to_string(d) + " h=" +
                                std::to_string(h) + " n=" + std::to_string(n) + " d_p=" +
                                std::to_string(d_p));
        if (steps == 0 || batch == 0 || eval_every == 0)
            throw InvalidConfig("steps, batch and eval_every must be positive");
        if (task == TaskKind::TeacherStudent && mode == AttentionMode::Standard &&
            (d % h != 0 || d_p != d / h))
            throw InvalidConfig("Standard mode needs h | d and d_p = d/h");
        if (use_ffn && ffn_width == 0) throw InvalidConfig("use_ffn set but ffn_width is 0");
        if (!(optimizer.lr >= 0.0)) throw InvalidConfig("learning rate must be >= 0");
    }

    // Trainable parameter count; layer norm affine params are frozen at
    // identity and excluded.
    std::size_t param_count() const {
        if (task == TaskKind::ContextFit) return 2 * d_p * d;
        std::size_t count = 4 * h * d_p * d; // 3 projections + matching w_o slice per head
        if (use_ffn) count += 2 * d * ffn_width;
        return count;
    }
};

struct ExperimentData {
    std::vector<Matrix> xs;
    std::vector<Matrix> targets; // P (ContextFit) or teacher outputs (TeacherStudent)
};

// Independent (X, P) instances: X standard normal d x n re-drawn until it is
// well-conditioned (when d >= n), P a mild softmax of normal logits so all
// entries are comfortably positive.
inline ExperimentData gen_context_fit(std::uint64_t seed, std::size_t n, std::size_t d,
                                      std::size_t samples) {
    ExperimentData data;
    const Rng base(seed);
    for (std::size_t s = 0; s < samples; ++s) {
        Rng rng = base.split(s);
        Matrix x = rng.normal_matrix(d, n);
        if (d >= n) {
            for (int attempt = 0; attempt < 64 && !(condition_proxy(x) < 1e3); ++attempt)
                x = rng.normal_matrix(d, n);
            if (!(condition_proxy(x) < 1e3))
                throw ConstructionFailed("could not draw a well-conditioned token matrix");
        }
        Matrix p = softmax_columns(rng.normal_matrix(n, n));
        ContextMatrix validated(p); // throws if degenerate
        data.xs.push_back(std::move(x));
        data.targets.push_back(validated.p());
    }
    return data;
}

struct BlockParams {
    MultiHeadParams attn;
    LayerNormParams ln1;
    bool use_ffn = false;
    Matrix w1, w2; // width x d, d x width
    LayerNormParams ln2;
};

inline Matrix relu(const Matrix& m) {
    Matrix out = m;
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
            if (out(i, j) < 0.0) out(i, j) = 0.0;
    return out;
}

inline Matrix ffn_forward(const Matrix& x, const Matrix& w1, const Matrix& w2) {
    return matmul(w2, relu(matmul(w1, x)));
}

struct FfnGradients {
    Matrix x, w1, w2;
};

inline FfnGradients ffn_backward(const Matrix& x, const Matrix& w1, const Matrix& w2,
                                 const Matrix& upstream) {
    const Matrix pre = matmul(w1, x);
    const Matrix act = relu(pre);
    FfnGradients g;
    g.w2 = matmul_a_bt(upstream, act);
    Matrix g_pre = matmul_at_b(w2, upstream);
    for (std::size_t i = 0; i < g_pre.rows(); ++i)
        for (std::size_t j = 0; j < g_pre.cols(); ++j)
            if (pre(i, j) <= 0.0) g_pre(i, j) = 0.0;
    g.w1 = matmul_a_bt(g_pre, x);
    g.x = matmul_at_b(w1, g_pre);
    return g;
}

// z1 = LN(x + attn(x)); with FFN: LN(z1 + w2 relu(w1 z1))
inline Matrix block_forward(const Matrix& x, const BlockParams& bp) {
    const Matrix z1 = layer_norm_columns(x + multi_head_forward(x, bp.attn), bp.ln1);
    if (!bp.use_ffn) return z1;
    return layer_norm_columns(z1 + ffn_forward(z1, bp.w1, bp.w2), bp.ln2);
}

struct BlockGradients {
    MultiHeadParams attn; // gradient holder, same shapes
    Matrix w1, w2;
    Matrix x;
};

inline BlockGradients block_backward(const Matrix& x, const BlockParams& bp, const Matrix& upstream) {
    const Matrix a1 = multi_head_forward(x, bp.attn);
    const Matrix r1 = x + a1;
    BlockGradients g;
    Matrix g_z1 = upstream;
    if (bp.use_ffn) {
        const Matrix z1 = layer_norm_columns(r1, bp.ln1);
        const Matrix r2 = z1 + ffn_forward(z1, bp.w1, bp.w2);
        const LayerNormGradients ln2_g = layer_norm_backward(r2, bp.ln2, upstream);
        const FfnGradients ffn_g = ffn_backward(z1, bp.w1, bp.w2, ln2_g.x);
        g.w1 = ffn_g.w1;
        g.w2 = ffn_g.w2;
        g_z1 = ln2_g.x + ffn_g.x; // residual + FFN path
    }
    const LayerNormGradients ln1_g = layer_norm_backward(r1, bp.ln1, g_z1);
    MultiHeadGradients attn_g = multi_head_backward(x, bp.attn, ln1_g.x);
    g.attn = std::move(attn_g.params);
    g.x = ln1_g.x + attn_g.x; // residual + attention path
    return g;
}

// Teacher = frozen Fixed-mode attention block; targets are its outputs on
// standard normal token matrices.
inline ExperimentData gen_teacher_student(std::uint64_t seed, std::size_t n, std::size_t d,
                                          std::size_t d_p_teacher, std::size_t h_teacher,
                                          std::size_t samples) {
    const Rng base(seed);
    Rng teacher_rng = base.split(0x7eacULL);
    BlockParams teacher;
    teacher.attn = MultiHeadParams::random(AttentionMode::Fixed, d, h_teacher, d_p_teacher, teacher_rng);
    teacher.ln1 = LayerNormParams::identity(d);
    ExperimentData data;
    for (std::size_t s = 0; s < samples; ++s) {
        Rng rng = base.split(1000 + s);
        Matrix x = rng.normal_matrix(d, n);
        data.targets.push_back(block_forward(x, teacher));
        data.xs.push_back(std::move(x));
    }
    return data;
}

namespace detail {

class Optimizer {
public:
    Optimizer(OptimizerConfig cfg, const std::vector<Matrix*>& params) : cfg_(cfg) {
        if (cfg_.kind == OptKind::Adam)
            for (const Matrix* p : params) {
                m_.emplace_back(p->rows(), p->cols());
                v_.emplace_back(p->rows(), p->cols());
            }
    }

    void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads) {
        ++t_;
        if (cfg_.kind == OptKind::Sgd) {
            for (std::size_t i = 0; i < params.size(); ++i)
                params[i]->add_scaled(grads[i], -cfg_.lr);
            return;
        }
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Matrix& p = *params[i];
            const Matrix& g = grads[i];
            for (std::size_t k = 0; k < p.rows(); ++k)
                for (std::size_t j = 0; j < p.cols(); ++j) {
                    double& m = m_[i](k, j);
                    double& v = v_[i](k, j);
                    const double gv = g(k, j);
                    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * gv;
                    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * gv * gv;
                    p(k, j) -= cfg_.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.epsilon);
                }
        }
    }

private:
    OptimizerConfig cfg_;
    std::vector<Matrix> m_, v_;
    std::uint64_t t_ = 0;
};

} // namespace detail

struct LossPoint {
    std::size_t step;
    double train_loss;
    double eval_loss;
};

struct TrainReport {
    ExperimentConfig config;
    std::vector<LossPoint> losses;
    double final_eval = 0.0;
    std::int64_t wall_time_ms = 0;
    std::size_t param_count = 0;
};

namespace detail {

// Mean squared error over all entries; gradient written into g_pred.
inline double mse_and_grad(const Matrix& pred, const Matrix& target, Matrix& g_pred) {
    const double inv = 1.0 / static_cast<double>(pred.rows() * pred.cols());
    double loss = 0.0;
    g_pred = Matrix(pred.rows(), pred.cols());
    for (std::size_t i = 0; i < pred.rows(); ++i)
        for (std::size_t j = 0; j < pred.cols(); ++j) {
            const double diff = pred(i, j) - target(i, j);
            loss += diff * diff * inv;
            g_pred(i, j) = 2.0 * diff * inv;
        }
    return loss;
}

struct ContextFitState {
    Matrix w_k, w_q;
    double scale;

    Matrix context(const Matrix& x) const {
        Matrix logits = matmul_at_b(matmul(w_k, x), matmul(w_q, x));
        logits *= 1.0 / scale;
        return softmax_columns(logits);
    }

    double loss_accumulate(const Matrix& x, const Matrix& p, Matrix& g_wk, Matrix& g_wq) const {
        const Matrix k = matmul(w_k, x);
        const Matrix q = matmul(w_q, x);
        Matrix logits = matmul_at_b(k, q);
        logits *= 1.0 / scale;
        const Matrix ctx = softmax_columns(logits);
        Matrix g_ctx;
        const double loss = mse_and_grad(ctx, p, g_ctx);
        const std::size_t n = x.cols();
        Matrix g_logits(n, n);
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t i = 0; i < n; ++i) dot += g_ctx(i, j) * ctx(i, j);
            for (std::size_t i = 0; i < n; ++i) g_logits(i, j) = ctx(i, j) * (g_ctx(i, j) - dot);
        }
        Matrix g_k = matmul_a_bt(q, g_logits);
        Matrix g_q = matmul(k, g_logits);
        g_wk += matmul_a_bt(g_k, x) * (1.0 / scale);
        g_wq += matmul_a_bt(g_q, x) * (1.0 / scale);
        return loss;
    }
};

} // namespace detail

inline TrainReport train(const ExperimentConfig& cfg, const ExperimentData& data) {
    cfg.validate();
    if (data.xs.empty() || data.xs.size() != data.targets.size())
        throw InvalidConfig("dataset has " + std::to_string(data.xs.size()) + " inputs and " +
                            std::to_string(data.targets.size()) + " targets");
    const auto t0 = std::chrono::steady_clock::now();

    const std::size_t samples = data.xs.size();
    const std::size_t holdout = samples / 5; // last 20% by index
    const std::size_t n_train = samples - holdout;

    Rng init_rng = Rng(cfg.seed).split(0x1417ULL);

    // Model containers; exactly one of the two is active.
    detail::ContextFitState cf;
    BlockParams block;
    std::vector<Matrix*> params;
    if (cfg.task == TaskKind::ContextFit) {
        const double b = 1.0 / std::sqrt(static_cast<double>(cfg.d));
        cf.w_k = init_rng.uniform_matrix(cfg.d_p, cfg.d, -b, b);
        cf.w_q = init_rng.uniform_matrix(cfg.d_p, cfg.d, -b, b);
        cf.scale = std::sqrt(static_cast<double>(cfg.d_p));
        params = {&cf.w_k, &cf.w_q};
    } else {
        block.attn = MultiHeadParams::random(cfg.mode, cfg.d, cfg.h, cfg.d_p, init_rng);
        block.ln1 = LayerNormParams::identity(cfg.d);
        block.use_ffn = cfg.use_ffn;
        if (cfg.use_ffn) {
            const double b = 1.0 / std::sqrt(static_cast<double>(cfg.d));
            block.w1 = init_rng.uniform_matrix(cfg.ffn_width, cfg.d, -b, b);
            block.w2 = init_rng.uniform_matrix(cfg.d, cfg.ffn_width, -b, b);
            block.ln2 = LayerNormParams::identity(cfg.d);
        }
        for (auto& head : block.attn.heads) {
            params.push_back(&head.w_q);
            params.push_back(&head.w_k);
            params.push_back(&head.w_v);
        }
        params.push_back(&block.attn.w_o);
        if (cfg.use_ffn) {
            params.push_back(&block.w1);
            params.push_back(&block.w2);
        }
    }
    {
        std::size_t actual = 0;
        for (const Matrix* p : params) actual += p->size();
        if (actual != cfg.param_count())
            throw InvalidConfig("trainable containers hold " + std::to_string(actual) +
                                " params, formula says " + std::to_string(cfg.param_count()));
    }

    auto sample_loss = [&](std::size_t idx, std::vector<Matrix>* grads) -> double {
        const Matrix& x = data.xs[idx];
        const Matrix& target = data.targets[idx];
        if (cfg.task == TaskKind::ContextFit) {
            if (grads) return cf.loss_accumulate(x, target, (*grads)[0], (*grads)[1]);
            Matrix unused_k(cf.w_k.rows(), cf.w_k.cols()), unused_q(cf.w_q.rows(), cf.w_q.cols());
            return cf.loss_accumulate(x, target, unused_k, unused_q);
        }
        const Matrix out = block_forward(x, block);
        Matrix g_out;
        const double loss = detail::mse_and_grad(out, target, g_out);
        if (grads) {
            const BlockGradients bg = block_backward(x, block, g_out);
            std::size_t pi = 0;
            for (const auto& head : bg.attn.heads) {
                (*grads)[pi++] += head.w_q;
                (*grads)[pi++] += head.w_k;
                (*grads)[pi++] += head.w_v;
            }
            (*grads)[pi++] += bg.attn.w_o;
            if (cfg.use_ffn) {
                (*grads)[pi++] += bg.w1;
                (*grads)[pi++] += bg.w2;
            }
        }
        return loss;
    };

    auto eval_loss = [&]() -> double {
        double total = 0.0;
        if (holdout == 0) { // no holdout: evaluate on the training set itself
            for (std::size_t i = 0; i < n_train; ++i) total += sample_loss(i, nullptr);
            return total / static_cast<double>(n_train);
        }
        for (std::size_t i = n_train; i < samples; ++i) total += sample_loss(i, nullptr);
        return total / static_cast<double>(holdout);
    };

    detail::Optimizer opt(cfg.optimizer, params);
    TrainReport report;
    report.config = cfg;
    report.param_count = cfg.param_count();

    std::vector<Matrix> grads;
    for (const Matrix* p : params) grads.emplace_back(p->rows(), p->cols());

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        for (Matrix& g : grads) g.fill(0.0);
        double batch_loss = 0.0;
        for (std::size_t j = 0; j < cfg.batch; ++j) {
            const std::size_t idx = (step * cfg.batch + j) % n_train;
            batch_loss += sample_loss(idx, &grads);
        }
        batch_loss /= static_cast<double>(cfg.batch);
        if (!std::isfinite(batch_loss))
            throw Diverged("train loss non-finite at step " + std::to_string(step + 1));
        const double inv_batch = 1.0 / static_cast<double>(cfg.batch);
        for (Matrix& g : grads) g *= inv_batch;
        opt.step(params, grads);
        for (const Matrix* p : params)
            if (!p->all_finite()) throw Diverged("parameters non-finite at step " + std::to_string(step + 1));

        if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps)
            report.losses.push_back({step + 1, batch_loss, eval_loss()});
    }

    report.final_eval = report.losses.back().eval_loss;
    report.wall_time_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
    return report;
}

struct SweepOptions {
    std::size_t cf_samples = 1;       // ContextFit fits one instance by default
    std::size_t ts_samples = 32;
    std::size_t teacher_h = 8;
    std::size_t teacher_d_p = 0;      // 0: use n
};

inline ExperimentData gen_data_for(const ExperimentConfig& cfg, std::uint64_t run_seed,
                                   const SweepOptions& opt) {
    if (cfg.task == TaskKind::ContextFit)
        return gen_context_fit(run_seed, cfg.n, cfg.d, opt.cf_samples);
    return gen_teacher_student(run_seed, cfg.n, cfg.d,
                               opt.teacher_d_p == 0 ? cfg.n : opt.teacher_d_p, opt.teacher_h,
                               opt.ts_samples);
}

inline const char* kSweepCsvHeader =
    "task,mode,d,h,n,d_p,use_ffn,ffn_width,steps,batch,opt,lr,seed,param_count,final_eval,"
    "wall_time_ms,error";

namespace detail {

inline std::string sanitize_csv_field(std::string s) {
    for (char& c : s)
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    return s;
}

} // namespace detail

// One row per (config, seed) run, in order; failures become rows with the
// error column set instead of aborting the sweep. The file is written
// atomically (temp + rename).
inline std::string run_sweep(const std::vector<ExperimentConfig>& configs,
                             std::size_t seeds_per_config, const SweepOptions& opt = {}) {
    std::ostringstream out;
    out << kSweepCsvHeader << "\n";
    for (const ExperimentConfig& base_cfg : configs) {
        for (std::size_t s = 0; s < seeds_per_config; ++s) {
            ExperimentConfig cfg = base_cfg;
            cfg.seed = base_cfg.seed + s;
            std::string error;
            double final_eval = std::numeric_limits<double>::quiet_NaN();
            std::int64_t wall_ms = 0;
            std::size_t pcount = 0;
            try {
                cfg.validate();
                pcount = cfg.param_count();
                const ExperimentData data = gen_data_for(cfg, cfg.seed, opt);
                const TrainReport report = train(cfg, data);
                final_eval = report.final_eval;
                wall_ms = report.wall_time_ms;
            } catch (const Error& e) {
                error = detail::sanitize_csv_field(e.what());
            }
            out << to_string(cfg.task) << "," << to_string(cfg.mode) << "," << cfg.d << "," << cfg.h
                << "," << cfg.n << "," << cfg.d_p << "," << (cfg.use_ffn ? 1 : 0) << ","
                << cfg.ffn_width << "," << cfg.steps << "," << cfg.batch << ","
                << to_string(cfg.optimizer.kind) << "," << format_double(cfg.optimizer.lr) << ","
                << cfg.seed << "," << pcount << "," << format_double(final_eval) << "," << wall_ms
                << "," << error << "\n";
        }
    }
    return out.str();
}

inline void sweep_to_file(const std::vector<ExperimentConfig>& configs, std::size_t seeds_per_config,
                          const std::string& out_path, const SweepOptions& opt = {}) {
    atomic_write_text(out_path, run_sweep(configs, seeds_per_config, opt));
}

} // namespace attnlab
