#include <catch2/catch_amalgamated.hpp>

#include <attnlab/experiments.hpp>
#include <attnlab/matrix.hpp>
#include <attnlab/realization.hpp>
#include <attnlab/rng.hpp>

#include <cmath>
#include <cstddef>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

using namespace attnlab;

namespace {

ExperimentConfig context_fit_config() {
    ExperimentConfig cfg;
    cfg.task = TaskKind::ContextFit;
    cfg.d = 8;
    cfg.n = 4;
    cfg.d_p = 4;
    cfg.steps = 200;
    cfg.seed = 11;
    return cfg;
}

ExperimentConfig teacher_student_config() {
    ExperimentConfig cfg;
    cfg.task = TaskKind::TeacherStudent;
    cfg.mode = AttentionMode::Fixed;
    cfg.d = 8;
    cfg.h = 2;
    cfg.n = 4;
    cfg.d_p = 4;
    cfg.steps = 150;
    cfg.batch = 4;
    cfg.seed = 12;
    return cfg;
}

std::vector<std::string> split_lines(const std::string& s) {
    std::vector<std::string> lines;
    std::istringstream is(s);
    std::string line;
    while (std::getline(is, line)) lines.push_back(line);
    return lines;
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    return fields;
}

} // namespace

TEST_CASE("config validation catches inconsistent setups", "[experiments]") {
    ExperimentConfig cfg = teacher_student_config();
    cfg.mode = AttentionMode::Standard;
    cfg.h = 2;
    cfg.d_p = 3; // standard mode forces d_p = d/h = 4
    REQUIRE_THROWS_AS(cfg.validate(), InvalidConfig);

    ExperimentConfig zero = context_fit_config();
    zero.steps = 0;
    REQUIRE_THROWS_AS(zero.validate(), InvalidConfig);

    ExperimentConfig ffn = teacher_student_config();
    ffn.use_ffn = true; // width left at zero
    REQUIRE_THROWS_AS(ffn.validate(), InvalidConfig);

    ExperimentConfig neg = context_fit_config();
    neg.optimizer.lr = -0.1;
    REQUIRE_THROWS_AS(neg.validate(), InvalidConfig);
}

TEST_CASE("parameter count formula matches the built containers", "[experiments]") {
    // ContextFit trains one key and one query map.
    ExperimentConfig cf = context_fit_config();
    cf.d_p = 3;
    REQUIRE(cf.param_count() == 2 * 3 * 8);

    // TeacherStudent trains h heads of three projections plus the matching
    // w_o slice, and optionally the two FFN mats; count the actual entries.
    ExperimentConfig ts = teacher_student_config();
    ts.use_ffn = true;
    ts.ffn_width = 5;
    Rng rng(777);
    const MultiHeadParams p = MultiHeadParams::random(ts.mode, ts.d, ts.h, ts.d_p, rng);
    std::size_t actual = 0;
    for (const HeadParams& hp : p.heads)
        actual += hp.w_q.rows() * hp.w_q.cols() + hp.w_k.rows() * hp.w_k.cols() +
                  hp.w_v.rows() * hp.w_v.cols();
    actual += p.w_o.rows() * p.w_o.cols();
    actual += ts.ffn_width * ts.d + ts.d * ts.ffn_width;
    REQUIRE(ts.param_count() == actual);
}

TEST_CASE("context fit data is well conditioned and stochastic", "[experiments]") {
    const ExperimentData data = gen_context_fit(21, 4, 8, 6);
    REQUIRE(data.xs.size() == 6);
    REQUIRE(data.targets.size() == 6);
    for (std::size_t s = 0; s < 6; ++s) {
        REQUIRE(condition_proxy(data.xs[s]) < 1e3);
        for (std::size_t j = 0; j < 4; ++j) {
            double sum = 0.0;
            for (std::size_t i = 0; i < 4; ++i) {
                REQUIRE(data.targets[s](i, j) > 0.0);
                sum += data.targets[s](i, j);
            }
            REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
        }
    }

    // Same seed, same data, bitwise.
    const ExperimentData again = gen_context_fit(21, 4, 8, 6);
    for (std::size_t s = 0; s < 6; ++s) {
        REQUIRE(max_abs_diff(data.xs[s], again.xs[s]) == 0.0);
        REQUIRE(max_abs_diff(data.targets[s], again.targets[s]) == 0.0);
    }
}

TEST_CASE("teacher outputs carry the trailing layer norm signature", "[experiments]") {
    const std::size_t d = 8, n = 4;
    const ExperimentData data = gen_teacher_student(31, n, d, 4, 2, 5);
    REQUIRE(data.xs.size() == 5);
    for (std::size_t s = 0; s < 5; ++s) {
        REQUIRE(data.targets[s].rows() == d);
        REQUIRE(data.targets[s].cols() == n);
        // The teacher block ends in an identity-affine layer norm, so every
        // target column is normalized.
        for (std::size_t j = 0; j < n; ++j) {
            double mean = 0.0, var = 0.0;
            for (std::size_t i = 0; i < d; ++i) mean += data.targets[s](i, j);
            mean /= d;
            for (std::size_t i = 0; i < d; ++i)
                var += (data.targets[s](i, j) - mean) * (data.targets[s](i, j) - mean);
            var /= d;
            REQUIRE(std::abs(mean) < 1e-9);
            REQUIRE(var == Catch::Approx(1.0).margin(1e-4));
        }
    }
}

TEST_CASE("ffn forward on a hand-computed instance", "[experiments]") {
    const Matrix x = Matrix::from_rows({{1.0}, {2.0}});
    const Matrix w1 = Matrix::from_rows({{1.0, 1.0}, {-1.0, 0.0}});
    const Matrix w2 = Matrix::identity(2);
    // w1 x = (3, -1), relu gives (3, 0).
    const Matrix y = ffn_forward(x, w1, w2);
    REQUIRE(y(0, 0) == 3.0);
    REQUIRE(y(1, 0) == 0.0);
}

TEST_CASE("block forward is permutation equivariant", "[experiments]") {
    Rng rng(41);
    BlockParams bp;
    bp.attn = MultiHeadParams::random(AttentionMode::Fixed, 6, 2, 4, rng);
    bp.ln1 = LayerNormParams::identity(6);
    bp.use_ffn = true;
    bp.w1 = rng.uniform_matrix(5, 6, -0.5, 0.5);
    bp.w2 = rng.uniform_matrix(6, 5, -0.5, 0.5);
    bp.ln2 = LayerNormParams::identity(6);

    const Matrix x = rng.normal_matrix(6, 5);
    const std::vector<std::size_t> perm = {4, 2, 0, 3, 1};
    Matrix xp(6, 5), expected(6, 5);
    const Matrix y = block_forward(x, bp);
    for (std::size_t j = 0; j < 5; ++j)
        for (std::size_t i = 0; i < 6; ++i) {
            xp(i, j) = x(i, perm[j]);
            expected(i, j) = y(i, perm[j]);
        }
    REQUIRE(max_abs_diff(block_forward(xp, bp), expected) < 1e-10);
}

TEST_CASE("block backward matches finite differences with ffn enabled", "[experiments]") {
    Rng rng(42);
    BlockParams bp;
    bp.attn = MultiHeadParams::random(AttentionMode::Fixed, 5, 2, 3, rng);
    bp.ln1 = LayerNormParams::identity(5);
    bp.use_ffn = true;
    bp.w1 = rng.uniform_matrix(4, 5, -0.5, 0.5);
    bp.w2 = rng.uniform_matrix(5, 4, -0.5, 0.5);
    bp.ln2 = LayerNormParams::identity(5);

    Matrix x = rng.normal_matrix(5, 3);
    const Matrix g = rng.normal_matrix(5, 3);
    auto loss = [&] {
        const Matrix y = block_forward(x, bp);
        double acc = 0.0;
        for (std::size_t i = 0; i < y.rows(); ++i)
            for (std::size_t j = 0; j < y.cols(); ++j) acc += g(i, j) * y(i, j);
        return acc;
    };
    const BlockGradients grads = block_backward(x, bp, g);

    double max_rel = 0.0;
    auto check = [&](double* slot, double analytic) {
        const double h = 1e-5, saved = *slot;
        *slot = saved + h;
        const double up = loss();
        *slot = saved - h;
        const double down = loss();
        *slot = saved;
        const double fd = (up - down) / (2.0 * h);
        max_rel = std::max(max_rel,
                           std::abs(fd - analytic) / std::max({1.0, std::abs(fd), std::abs(analytic)}));
    };
    for (std::size_t head = 0; head < 2; ++head)
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t c = 0; c < 5; ++c) {
                check(&bp.attn.heads[head].w_q(r, c), grads.attn.heads[head].w_q(r, c));
                check(&bp.attn.heads[head].w_k(r, c), grads.attn.heads[head].w_k(r, c));
                check(&bp.attn.heads[head].w_v(r, c), grads.attn.heads[head].w_v(r, c));
            }
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 6; ++c) check(&bp.attn.w_o(r, c), grads.attn.w_o(r, c));
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 5; ++c) check(&bp.w1(r, c), grads.w1(r, c));
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 4; ++c) check(&bp.w2(r, c), grads.w2(r, c));
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 3; ++c) check(&x(r, c), grads.x(r, c));

    REQUIRE(max_rel < 1e-4);
}

TEST_CASE("adam and sgd steps match hand-derived updates", "[experiments]") {
    // One parameter, constant gradient g = 2. SGD moves by lr * g; Adam's
    // bias-corrected first step is lr * g / (|g| + eps), essentially lr.
    OptimizerConfig sgd_cfg;
    sgd_cfg.kind = OptKind::Sgd;
    sgd_cfg.lr = 0.05;
    Matrix w_sgd(1, 1, 1.0);
    detail::Optimizer sgd(sgd_cfg, {&w_sgd});
    const std::vector<Matrix> g = {Matrix(1, 1, 2.0)};
    sgd.step({&w_sgd}, g);
    REQUIRE(w_sgd(0, 0) == Catch::Approx(1.0 - 0.05 * 2.0).margin(1e-15));

    OptimizerConfig adam_cfg;
    adam_cfg.lr = 0.05;
    Matrix w_adam(1, 1, 1.0);
    detail::Optimizer adam(adam_cfg, {&w_adam});
    adam.step({&w_adam}, g);
    REQUIRE(w_adam(0, 0) == Catch::Approx(1.0 - 0.05).margin(1e-8));

    // Constant gradient keeps the Adam step near -lr thereafter.
    adam.step({&w_adam}, g);
    REQUIRE(w_adam(0, 0) == Catch::Approx(1.0 - 2 * 0.05).margin(1e-6));
}

TEST_CASE("zero learning rate freezes the loss", "[experiments]") {
    ExperimentConfig cfg = context_fit_config();
    cfg.optimizer.lr = 0.0;
    cfg.eval_every = 50;
    const ExperimentData data = gen_context_fit(cfg.seed, cfg.n, cfg.d, 1);
    const TrainReport report = train(cfg, data);
    REQUIRE(report.losses.size() >= 2);
    for (const LossPoint& lp : report.losses) {
        REQUIRE(lp.train_loss == report.losses.front().train_loss);
        REQUIRE(lp.eval_loss == report.losses.front().eval_loss);
    }
}

TEST_CASE("training is deterministic given the seed", "[experiments]") {
    const ExperimentConfig cfg = teacher_student_config();
    const ExperimentData data = gen_teacher_student(cfg.seed, cfg.n, cfg.d, 4, 2, 8);
    const TrainReport a = train(cfg, data);
    const TrainReport b = train(cfg, data);
    REQUIRE(a.final_eval == b.final_eval);
    REQUIRE(a.losses.size() == b.losses.size());
    for (std::size_t i = 0; i < a.losses.size(); ++i) {
        REQUIRE(a.losses[i].train_loss == b.losses[i].train_loss);
        REQUIRE(a.losses[i].eval_loss == b.losses[i].eval_loss);
    }
    REQUIRE(a.param_count == cfg.param_count());
}

TEST_CASE("context fit reaches a realizable target", "[experiments]") {
    // d_p = d >= n: the exact construction proves a zero-loss point exists,
    // so the optimizer should get close.
    ExperimentConfig cfg = context_fit_config();
    cfg.d_p = cfg.d;
    cfg.steps = 2000;
    const ExperimentData data = gen_context_fit(cfg.seed, cfg.n, cfg.d, 1);
    const TrainReport report = train(cfg, data);
    REQUIRE(report.final_eval < 1e-4);

    // And the constructed optimum itself evaluates to (near) zero loss.
    const RealizationResult res =
        realize_context(data.xs[0], ContextMatrix(data.targets[0]));
    Matrix logits = matmul_at_b(matmul(res.w_k, data.xs[0]), matmul(res.w_q, data.xs[0]));
    logits *= 1.0 / std::sqrt(static_cast<double>(cfg.d));
    const Matrix fit = softmax_columns(logits);
    double mse = 0.0;
    for (std::size_t i = 0; i < cfg.n; ++i)
        for (std::size_t j = 0; j < cfg.n; ++j) {
            const double diff = fit(i, j) - data.targets[0](i, j);
            mse += diff * diff;
        }
    mse /= static_cast<double>(cfg.n * cfg.n);
    REQUIRE(mse < 1e-20);
}

TEST_CASE("train rejects mismatched data", "[experiments]") {
    ExperimentConfig cfg = context_fit_config();
    const ExperimentData none;
    REQUIRE_THROWS_AS(train(cfg, none), InvalidConfig);
}

TEST_CASE("sweep emits one row per config and seed with the exact header", "[experiments]") {
    ExperimentConfig cf = context_fit_config();
    cf.steps = 60;
    ExperimentConfig ts = teacher_student_config();
    ts.steps = 60;
    SweepOptions opt;
    opt.ts_samples = 6;
    opt.teacher_h = 2;
    const std::string csv = run_sweep({cf, ts}, 2, opt);

    const std::vector<std::string> lines = split_lines(csv);
    REQUIRE(lines.size() == 1 + 2 * 2);
    REQUIRE(lines[0] == std::string(kSweepCsvHeader));
    for (std::size_t row = 1; row < lines.size(); ++row) {
        const std::vector<std::string> fields = split_fields(lines[row]);
        REQUIRE(fields.size() == 17);
        REQUIRE(fields.back().empty()); // no errors on healthy configs
        REQUIRE(std::stod(fields[14]) > 0.0); // final_eval
    }
    // Seeds increment from the base config seed.
    REQUIRE(split_fields(lines[1])[12] == "11");
    REQUIRE(split_fields(lines[2])[12] == "12");

    // Bitwise deterministic modulo the wall-time column.
    const std::string again = run_sweep({cf, ts}, 2, opt);
    const std::vector<std::string> lines2 = split_lines(again);
    for (std::size_t row = 1; row < lines.size(); ++row) {
        std::vector<std::string> a = split_fields(lines[row]);
        std::vector<std::string> b = split_fields(lines2[row]);
        a[15] = b[15] = "";
        REQUIRE(a == b);
    }
}

TEST_CASE("sweep records failures without aborting the table", "[experiments]") {
    ExperimentConfig good = context_fit_config();
    good.steps = 40;
    ExperimentConfig bad = good;
    bad.steps = 0; // validate() raises before any work
    const std::string csv = run_sweep({good, bad}, 1);
    const std::vector<std::string> lines = split_lines(csv);
    REQUIRE(lines.size() == 3);
    REQUIRE(split_fields(lines[1]).back().empty());
    const std::vector<std::string> bad_fields = split_fields(lines[2]);
    REQUIRE_FALSE(bad_fields.back().empty());
    REQUIRE(bad_fields[14] == "nan");
}

TEST_CASE("more heads at fixed head size reduce teacher-student loss", "[experiments]") {
    // Small directional instance of the capacity staircase; the acceptance
    // gate runs the full-size version.
    SweepOptions opt;
    opt.ts_samples = 32;
    opt.teacher_h = 4;
    opt.teacher_d_p = 4;
    ExperimentConfig narrow = teacher_student_config();
    narrow.h = 1;
    narrow.steps = 1500;
    narrow.batch = 8;
    ExperimentConfig wide = teacher_student_config();
    wide.h = 4;
    wide.steps = 1500;
    wide.batch = 8;

    const ExperimentData data = gen_data_for(narrow, 5, opt);
    ExperimentConfig n5 = narrow, w5 = wide;
    n5.seed = w5.seed = 5;
    const double narrow_loss = train(n5, data).final_eval;
    const double wide_loss = train(w5, data).final_eval;
    REQUIRE(wide_loss < narrow_loss);
}
