#pragma once

// JSON encodings for the external interfaces. Matrices travel as embedded
// CSV strings (same format as the .csv files, 17 significant digits), so a
// serialize/parse round trip reproduces every double bit for bit.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnlab/attention.hpp"
#include "attnlab/csv.hpp"
#include "attnlab/errors.hpp"
#include "attnlab/experiments.hpp"
#include "attnlab/realization.hpp"
#include "attnlab/separation.hpp"

namespace attnlab {

using json = nlohmann::json;

inline json params_to_json(const MultiHeadParams& p) {
    p.validate();
    json j;
    j["mode"] = to_string(p.mode);
    j["d"] = p.d;
    j["h"] = p.h;
    j["d_p"] = p.d_p;
    if (p.n_hint) j["n_hint"] = *p.n_hint;
    j["heads"] = json::array();
    for (const auto& head : p.heads)
        j["heads"].push_back({{"w_q", matrix_to_csv_string(head.w_q)},
                              {"w_k", matrix_to_csv_string(head.w_k)},
                              {"w_v", matrix_to_csv_string(head.w_v)}});
    j["w_o"] = matrix_to_csv_string(p.w_o);
    return j;
}

inline AttentionMode mode_from_string(const std::string& s) {
    if (s == "Standard") return AttentionMode::Standard;
    if (s == "Fixed") return AttentionMode::Fixed;
    throw ParseError("unknown attention mode '" + s + "'");
}

inline MultiHeadParams params_from_json(const json& j) {
    try {
        MultiHeadParams p;
        p.mode = mode_from_string(j.at("mode").get<std::string>());
        p.d = j.at("d").get<std::size_t>();
        p.h = j.at("h").get<std::size_t>();
        p.d_p = j.at("d_p").get<std::size_t>();
        if (j.contains("n_hint")) p.n_hint = j.at("n_hint").get<std::size_t>();
        for (const auto& head : j.at("heads"))
            p.heads.push_back({matrix_from_csv_string(head.at("w_q").get<std::string>()),
                               matrix_from_csv_string(head.at("w_k").get<std::string>()),
                               matrix_from_csv_string(head.at("w_v").get<std::string>())});
        p.w_o = matrix_from_csv_string(j.at("w_o").get<std::string>());
        p.validate();
        return p;
    } catch (const json::exception& e) {
        throw ParseError(std::string("attention params json: ") + e.what());
    }
}

inline json realization_to_json(const RealizationResult& r) {
    json j;
    j["residual_max_abs"] = r.residual_max_abs;
    j["d0"] = r.d0_used;
    j["w_k_csv"] = matrix_to_csv_string(r.w_k);
    j["w_q_csv"] = matrix_to_csv_string(r.w_q);
    j["condition_estimate"] = r.condition_estimate;
    j["ill_conditioned"] = r.ill_conditioned;
    return j;
}

inline json witness_to_json(const WitnessReport& r) {
    json j;
    j["case"] = to_string(r.which);
    j["gap_frobenius"] = r.gap_frobenius;
    j["x_csv"] = matrix_to_csv_string(r.x);
    j["diagnostics"] = r.diagnostics;
    json vecs = json::object();
    for (const auto& [name, m] : r.vectors) vecs[name] = matrix_to_csv_string(m);
    j["vectors"] = vecs;
    return j;
}

inline json summary_to_json(const SeparationSummary& s) {
    json j;
    j["samples"] = s.samples;
    j["case_counts"] = {{"Case1", s.case1_count}, {"Case2", s.case2_count}, {"Case3", s.case3_count}};
    j["min_gap"] = s.min_gap;
    j["case3_available"] = s.case3_available;
    j["witnesses"] = json::array();
    for (const auto& r : s.reports) j["witnesses"].push_back(witness_to_json(r));
    return j;
}

inline json train_report_to_json(const TrainReport& r) {
    json j;
    j["task"] = to_string(r.config.task);
    j["mode"] = to_string(r.config.mode);
    j["d"] = r.config.d;
    j["h"] = r.config.h;
    j["n"] = r.config.n;
    j["d_p"] = r.config.d_p;
    j["use_ffn"] = r.config.use_ffn;
    j["ffn_width"] = r.config.ffn_width;
    j["steps"] = r.config.steps;
    j["batch"] = r.config.batch;
    j["opt"] = to_string(r.config.optimizer.kind);
    j["lr"] = r.config.optimizer.lr;
    j["seed"] = r.config.seed;
    j["param_count"] = r.param_count;
    j["final_eval"] = r.final_eval;
    j["wall_time_ms"] = r.wall_time_ms;
    j["losses"] = json::array();
    for (const auto& lp : r.losses)
        j["losses"].push_back({{"step", lp.step}, {"train_loss", lp.train_loss}, {"eval_loss", lp.eval_loss}});
    return j;
}

// Sweep input: {"seeds_per_config": k, "options": {...}?, "configs": [...]}
// Unknown keys anywhere are rejected so typos cannot silently change runs.
struct SweepSpec {
    std::vector<ExperimentConfig> configs;
    std::size_t seeds_per_config = 1;
    SweepOptions options;
};

namespace detail {

inline void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                                const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) ok = true;
        if (!ok) throw ParseError("unknown key '" + key + "' in " + where);
    }
}

} // namespace detail

inline ExperimentConfig experiment_config_from_json(const json& j) {
    detail::reject_unknown_keys(j,
                                {"task", "mode", "d", "h", "n", "d_p", "use_ffn", "ffn_width", "steps",
                                 "batch", "opt", "lr", "beta1", "beta2", "epsilon", "seed", "eval_every"},
                                "experiment config");
    try {
        ExperimentConfig cfg;
        const std::string task = j.at("task").get<std::string>();
        if (task == "ContextFit") cfg.task = TaskKind::ContextFit;
        else if (task == "TeacherStudent") cfg.task = TaskKind::TeacherStudent;
        else throw ParseError("unknown task '" + task + "'");
        if (j.contains("mode")) cfg.mode = mode_from_string(j.at("mode").get<std::string>());
        cfg.d = j.at("d").get<std::size_t>();
        if (j.contains("h")) cfg.h = j.at("h").get<std::size_t>();
        cfg.n = j.at("n").get<std::size_t>();
        cfg.d_p = j.at("d_p").get<std::size_t>();
        if (j.contains("use_ffn")) cfg.use_ffn = j.at("use_ffn").get<bool>();
        if (j.contains("ffn_width")) cfg.ffn_width = j.at("ffn_width").get<std::size_t>();
        cfg.steps = j.at("steps").get<std::size_t>();
        if (j.contains("batch")) cfg.batch = j.at("batch").get<std::size_t>();
        if (j.contains("opt")) {
            const std::string o = j.at("opt").get<std::string>();
            if (o == "Adam") cfg.optimizer.kind = OptKind::Adam;
            else if (o == "SGD") cfg.optimizer.kind = OptKind::Sgd;
            else throw ParseError("unknown optimizer '" + o + "'");
        }
        if (j.contains("lr")) cfg.optimizer.lr = j.at("lr").get<double>();
        if (j.contains("beta1")) cfg.optimizer.beta1 = j.at("beta1").get<double>();
        if (j.contains("beta2")) cfg.optimizer.beta2 = j.at("beta2").get<double>();
        if (j.contains("epsilon")) cfg.optimizer.epsilon = j.at("epsilon").get<double>();
        cfg.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("eval_every")) cfg.eval_every = j.at("eval_every").get<std::size_t>();
        cfg.validate();
        return cfg;
    } catch (const json::exception& e) {
        throw ParseError(std::string("experiment config json: ") + e.what());
    }
}

inline SweepSpec sweep_spec_from_json(const json& j) {
    detail::reject_unknown_keys(j, {"seeds_per_config", "options", "configs"}, "sweep spec");
    try {
        SweepSpec spec;
        if (j.contains("seeds_per_config"))
            spec.seeds_per_config = j.at("seeds_per_config").get<std::size_t>();
        if (j.contains("options")) {
            const json& o = j.at("options");
            detail::reject_unknown_keys(o, {"cf_samples", "ts_samples", "teacher_h", "teacher_d_p"},
                                        "sweep options");
            if (o.contains("cf_samples")) spec.options.cf_samples = o.at("cf_samples").get<std::size_t>();
            if (o.contains("ts_samples")) spec.options.ts_samples = o.at("ts_samples").get<std::size_t>();
            if (o.contains("teacher_h")) spec.options.teacher_h = o.at("teacher_h").get<std::size_t>();
            if (o.contains("teacher_d_p"))
                spec.options.teacher_d_p = o.at("teacher_d_p").get<std::size_t>();
        }
        for (const auto& cj : j.at("configs")) spec.configs.push_back(experiment_config_from_json(cj));
        if (spec.configs.empty()) throw ParseError("sweep spec has no configs");
        if (spec.seeds_per_config == 0) throw ParseError("seeds_per_config must be positive");
        return spec;
    } catch (const json::exception& e) {
        throw ParseError(std::string("sweep spec json: ") + e.what());
    }
}

inline json parse_json_text(const std::string& text, const std::string& what) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ParseError("invalid json in " + what);
    return j;
}

} // namespace attnlab
