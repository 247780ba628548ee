// Command-line front end. Subcommands map one-to-one onto library entry
// points; all file outputs are written atomically (temp + rename). Exit
// codes: 0 success, 1 domain error (printed with its case name), 2 usage.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "attnlab/attention.hpp"
#include "attnlab/csv.hpp"
#include "attnlab/errors.hpp"
#include "attnlab/experiments.hpp"
#include "attnlab/realization.hpp"
#include "attnlab/selftest.hpp"
#include "attnlab/separation.hpp"
#include "attnlab/serialize.hpp"

namespace {

using namespace attnlab;

void write_json_atomic(const std::string& path, const json& j) {
    atomic_write_text(path, j.dump(2) + "\n");
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

int cmd_realize(const std::string& x_path, const std::string& p_path, const std::string& out_path,
                const std::string& d0_path) {
    const Matrix x = read_matrix_csv_file(x_path);
    const ContextMatrix p(read_matrix_csv_file(p_path));
    std::optional<std::vector<double>> d0;
    if (!d0_path.empty()) {
        const Matrix d0m = read_matrix_csv_file(d0_path);
        if (d0m.cols() != 1)
            throw ParseError("d0 must be a single-column matrix, got " + Matrix::shape_str(d0m));
        std::vector<double> v(d0m.rows());
        for (std::size_t i = 0; i < d0m.rows(); ++i) v[i] = d0m(i, 0);
        d0 = std::move(v);
    }
    const RealizationResult r = realize_context(x, p, d0);
    if (!out_path.empty()) write_json_atomic(out_path, realization_to_json(r));
    std::cout << "residual_max_abs " << format_double(r.residual_max_abs) << "\n";
    if (r.ill_conditioned)
        std::cerr << "warning: token matrix condition estimate " << format_double(r.condition_estimate)
                  << " exceeds 1e6; residual may degrade\n";
    return 0;
}

int cmd_bottleneck(const std::string& out_path) {
    const ScalarWitness w = scalar_bottleneck_witness();
    std::cout << "min_residual " << format_double(w.min_residual) << "\n"
              << "argmin_w " << format_double(w.argmin_w) << "\n";
    if (!out_path.empty()) {
        json j;
        j["min_residual"] = w.min_residual;
        j["argmin_w"] = w.argmin_w;
        write_json_atomic(out_path, j);
    }
    return 0;
}

int cmd_separate(std::size_t d, std::size_t d_p, std::size_t h, std::size_t n, std::size_t samples,
                 std::uint64_t seed, bool skew_u, const std::string& out_path) {
    const SeparationTarget t =
        skew_u ? build_target_skew_u(d, d_p, h, n, seed) : build_target(d, d_p, h, n, seed);
    const SeparationSummary s = verify_separation(t, samples, Rng(seed).split(1).seed());
    std::cout << "samples " << s.samples << "\n"
              << "case1 " << s.case1_count << " case2 " << s.case2_count << " case3 "
              << s.case3_count << "\n"
              << "min_gap " << format_double(s.min_gap) << "\n"
              << "case3_available " << (s.case3_available ? "true" : "false") << "\n";
    if (!out_path.empty()) {
        json j = summary_to_json(s);
        j["d"] = d;
        j["d_p"] = d_p;
        j["h"] = h;
        j["n"] = n;
        j["seed"] = seed;
        j["skew_u"] = skew_u;
        write_json_atomic(out_path, j);
    }
    return 0;
}

int cmd_train(const ExperimentConfig& cfg, const SweepOptions& opt, const std::string& out_path) {
    const ExperimentData data = gen_data_for(cfg, cfg.seed, opt);
    const TrainReport report = train(cfg, data);
    std::cout << "final_eval " << format_double(report.final_eval) << "\n"
              << "param_count " << report.param_count << "\n"
              << "wall_time_ms " << report.wall_time_ms << "\n";
    if (!out_path.empty()) write_json_atomic(out_path, train_report_to_json(report));
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& out_path) {
    const SweepSpec spec = sweep_spec_from_json(parse_json_text(read_text_file(config_path), config_path));
    sweep_to_file(spec.configs, spec.seeds_per_config, out_path, spec.options);
    std::cout << "wrote " << out_path << " (" << spec.configs.size() * spec.seeds_per_config
              << " runs)\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"numerical laboratory for the attention head-size bottleneck"};
    app.require_subcommand(1);

    // realize
    auto* realize = app.add_subcommand("realize", "construct key/query maps realizing a context");
    std::string x_path, p_path, d0_path, out_path;
    realize->add_option("--x", x_path, "token matrix csv (d x n, d >= n)")->required();
    realize->add_option("--p", p_path, "column-stochastic target csv (n x n)")->required();
    realize->add_option("--out", out_path, "output json path");
    realize->add_option("--d0", d0_path, "positive diagonal csv (n x 1), defaults to ones");

    // bottleneck
    auto* bottleneck = app.add_subcommand("bottleneck", "scalar low-rank counterexample floor");
    std::string bott_out;
    bottleneck->add_option("--out", bott_out, "output json path");

    // separate
    auto* separate = app.add_subcommand("separate", "classify and certify separation witnesses");
    separate->set_help_flag("--help", "print help"); // frees -h for the head-count flag
    std::size_t sep_d = 0, sep_dp = 0, sep_h = 0, sep_n = 0, sep_samples = 50;
    std::uint64_t sep_seed = 0;
    bool sep_skew = false;
    std::string sep_out;
    separate->add_option("--d", sep_d, "embedding dim")->required();
    separate->add_option("--dp", sep_dp, "reference head size")->required();
    separate->add_option("--h", sep_h, "head count")->required();
    separate->add_option("--n", sep_n, "token count")->required();
    separate->add_option("--samples", sep_samples, "random competitors to classify");
    separate->add_option("--seed", sep_seed, "target/sampling seed")->required();
    separate->add_flag("--skew-u", sep_skew, "build a skew-symmetric kernel (even dp)");
    separate->add_option("--out", sep_out, "output json path");

    // train
    auto* train_cmd = app.add_subcommand("train", "run one training configuration");
    train_cmd->set_help_flag("--help", "print help");
    std::string task_s = "contextfit", mode_s = "fixed", opt_s = "adam", train_out;
    ExperimentConfig cfg;
    SweepOptions data_opt;
    std::size_t ffn_width = 0, samples_override = 0;
    train_cmd->add_option("--task", task_s, "contextfit | teacherstudent")
        ->check(CLI::IsMember({"contextfit", "teacherstudent"}));
    train_cmd->add_option("--mode", mode_s, "standard | fixed")
        ->check(CLI::IsMember({"standard", "fixed"}));
    train_cmd->add_option("--d", cfg.d, "embedding dim")->required();
    train_cmd->add_option("--h", cfg.h, "head count (default 1)");
    train_cmd->add_option("--n", cfg.n, "token count")->required();
    train_cmd->add_option("--dp", cfg.d_p, "head size")->required();
    train_cmd->add_option("--steps", cfg.steps, "optimizer steps")->required();
    train_cmd->add_option("--batch", cfg.batch, "batch size (default 1)");
    train_cmd->add_option("--opt", opt_s, "adam | sgd")->check(CLI::IsMember({"adam", "sgd"}));
    train_cmd->add_option("--lr", cfg.optimizer.lr, "learning rate (default 1e-3)");
    train_cmd->add_option("--seed", cfg.seed, "run seed")->required();
    train_cmd->add_option("--eval-every", cfg.eval_every, "loss recording cadence (default 100)");
    train_cmd->add_option("--ffn-width", ffn_width, "enable the FFN sublayer with this width");
    train_cmd->add_option("--samples", samples_override, "dataset size override");
    train_cmd->add_option("--teacher-h", data_opt.teacher_h, "teacher head count (default 8)");
    train_cmd->add_option("--teacher-dp", data_opt.teacher_d_p, "teacher head size (default n)");
    train_cmd->add_option("--out", train_out, "output json path");

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "run a grid of configs to csv");
    std::string sweep_config, sweep_out;
    sweep_cmd->add_option("--config", sweep_config, "sweep spec json")->required();
    sweep_cmd->add_option("--out", sweep_out, "output csv path")->required();

    // selftest
    app.add_subcommand("selftest", "run the cross-module invariant suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (realize->parsed()) return cmd_realize(x_path, p_path, out_path, d0_path);
        if (bottleneck->parsed()) return cmd_bottleneck(bott_out);
        if (separate->parsed())
            return cmd_separate(sep_d, sep_dp, sep_h, sep_n, sep_samples, sep_seed, sep_skew, sep_out);
        if (train_cmd->parsed()) {
            cfg.task = task_s == "contextfit" ? TaskKind::ContextFit : TaskKind::TeacherStudent;
            cfg.mode = mode_s == "standard" ? AttentionMode::Standard : AttentionMode::Fixed;
            cfg.optimizer.kind = opt_s == "adam" ? OptKind::Adam : OptKind::Sgd;
            if (ffn_width > 0) {
                cfg.use_ffn = true;
                cfg.ffn_width = ffn_width;
            }
            cfg.validate();
            if (samples_override > 0) {
                data_opt.cf_samples = samples_override;
                data_opt.ts_samples = samples_override;
            }
            return cmd_train(cfg, data_opt, train_out);
        }
        if (sweep_cmd->parsed()) return cmd_sweep(sweep_config, sweep_out);
        // selftest
        return attnlab::selftest::run_all(std::cout) ? 0 : 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
