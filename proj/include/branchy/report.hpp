#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "branchy/cost.hpp"
#include "branchy/engine.hpp"
#include "branchy/errors.hpp"
#include "branchy/metrics.hpp"
#include "branchy/model_io.hpp"

namespace branchy {

struct EvalReport {
    std::string model_name;
    std::size_t n_examples = 0;
    double accuracy = 0.0;
    double macro_f1 = 0.0;          // strict: zero-support classes count as 0
    double macro_f1_present = 0.0;  // restricted to classes present in gold
    double forced_final_accuracy = 0.0;
    std::vector<ClassMetrics> per_class;
    std::vector<std::string> label_names;
    ExitDistribution exit_distribution;
    double expected_flops = 0.0;
    double baseline_flops = 0.0;
    double final_exit_flops = 0.0;
    double relative_savings = 0.0;
    CostReport cost;
    std::string config_echo;
};

namespace detail {

inline void check_trace(const ExitTrace& trace, const ThresholdSet& thresholds,
                        std::size_t n_exits, std::size_t layers_evaluated) {
    if (trace.entropies.size() != trace.chosen_exit)
        throw StateError("routing invariant violated: trace records " +
                         std::to_string(trace.entropies.size()) + " entropies for exit " +
                         std::to_string(trace.chosen_exit));
    if (layers_evaluated != trace.chosen_exit)
        throw StateError("routing invariant violated: evaluated " +
                         std::to_string(layers_evaluated) + " layers for exit " +
                         std::to_string(trace.chosen_exit));
    for (std::size_t n = 0; n + 1 < trace.chosen_exit; ++n)
        if (trace.entropies[n] < thresholds.values[n])
            throw StateError("routing invariant violated: exit " + std::to_string(n + 1) +
                             " should have fired");
    if (trace.chosen_exit < n_exits &&
        !(trace.entropies[trace.chosen_exit - 1] < thresholds.values[trace.chosen_exit - 1]))
        throw StateError("routing invariant violated: chosen exit did not fire");
}

}  // namespace detail

/// Early-exit evaluation plus a forced-final-exit pass. Routing invariants
/// are verified on every example.
inline EvalReport evaluate_model(const ModelBundle& bundle, const Dataset& data,
                                 std::size_t seq_len, bool include_embedding) {
    const BranchyModel& model = bundle.model;
    if (!model.calibrated())
        throw StateError("evaluate_model: model has no calibrated thresholds");
    if (data.examples.empty()) throw ConfigError("evaluate_model: empty dataset");
    if (data.n_classes() > model.n_classes())
        throw LabelError("evaluate_model: dataset has more labels than the model");

    std::size_t n_exits = model.n_exits();
    if (seq_len == 0) seq_len = data.mean_length_ceil();

    std::vector<std::size_t> predictions, forced, gold;
    std::vector<std::size_t> exit_counts(n_exits, 0);
    for (const auto& ex : data.examples) {
        std::size_t layers = 0;
        ExitTrace trace = infer_early_exit(model, ex.tokens, nullptr, &layers);
        detail::check_trace(trace, *model.thresholds, n_exits, layers);
        predictions.push_back(trace.prediction);
        ++exit_counts[trace.chosen_exit - 1];
        ExitTrace full = infer_early_exit(model, ex.tokens, nullptr, nullptr, n_exits);
        forced.push_back(full.prediction);
        gold.push_back(ex.label);
    }

    EvalReport r;
    r.model_name = model.kind == ModelKind::kDnn ? "dnn" : "stacked-lstm";
    r.n_examples = data.size();
    std::size_t n_classes = model.n_classes();
    r.accuracy = accuracy(predictions, gold);
    r.macro_f1 = macro_f1(predictions, gold, n_classes);
    r.macro_f1_present = macro_f1_present(predictions, gold, n_classes);
    r.forced_final_accuracy = accuracy(forced, gold);
    r.per_class = per_class_metrics(predictions, gold, n_classes);
    r.label_names = bundle.labels;
    for (std::size_t c : exit_counts)
        r.exit_distribution.probs.push_back(static_cast<double>(c) /
                                            static_cast<double>(data.size()));

    r.cost = build_cost_report(model, seq_len, include_embedding);
    std::vector<double> flops_per_exit;
    for (const auto& pe : r.cost.per_exit)
        flops_per_exit.push_back(static_cast<double>(pe.cumulative_flops));
    r.expected_flops = expected_complexity(flops_per_exit, r.exit_distribution);
    r.baseline_flops = static_cast<double>(r.cost.baseline_flops);
    r.final_exit_flops = flops_per_exit.back();
    r.relative_savings = relative_savings(r.expected_flops, r.baseline_flops);
    r.config_echo = bundle.config_echo;
    return r;
}

// ---- JSON serialization ----

inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json j;
    j["model"] = r.model_name;
    j["n_examples"] = r.n_examples;
    j["accuracy"] = r.accuracy;
    j["macro_f1"] = r.macro_f1;
    j["macro_f1_present"] = r.macro_f1_present;
    j["forced_final_accuracy"] = r.forced_final_accuracy;
    nlohmann::json per_class = nlohmann::json::array();
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
        const auto& m = r.per_class[c];
        per_class.push_back({{"label", c < r.label_names.size() ? r.label_names[c]
                                                                : std::to_string(c)},
                             {"precision", m.precision},
                             {"recall", m.recall},
                             {"f1", m.f1},
                             {"support", m.support}});
    }
    j["per_class"] = per_class;
    j["exit_distribution"] = r.exit_distribution.probs;
    j["expected_flops"] = r.expected_flops;
    j["baseline_flops"] = r.baseline_flops;
    j["final_exit_flops"] = r.final_exit_flops;
    j["relative_savings"] = r.relative_savings;
    nlohmann::json cost = nlohmann::json::array();
    for (std::size_t n = 0; n < r.cost.per_exit.size(); ++n)
        cost.push_back({{"exit", n + 1},
                        {"cumulative_params", r.cost.per_exit[n].cumulative_params},
                        {"cumulative_flops", r.cost.per_exit[n].cumulative_flops}});
    j["cost"] = {{"per_exit", cost},
                 {"baseline_params", r.cost.baseline_params},
                 {"baseline_flops", r.cost.baseline_flops},
                 {"seq_len_assumed", r.cost.seq_len_assumed}};
    j["config"] = r.config_echo;
    return j;
}

inline void write_report(const EvalReport& r, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open report file for writing: " + path);
    out << report_to_json(r).dump(2) << '\n';
}

inline nlohmann::json load_report_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open report file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("malformed report " + path + ": " + e.what());
    }
    for (const char* key : {"model", "accuracy", "macro_f1", "exit_distribution",
                            "expected_flops", "cost"})
        if (!j.contains(key))
            throw ParseError("malformed report " + path + ": missing field '" +
                             key + "'");
    return j;
}

// ---- CSV tables (metrics, cost, exit distribution) ----

namespace detail {

inline std::string csv_num(double v) {
    std::ostringstream os;
    os << std::setprecision(12) << v;
    return os.str();
}

}  // namespace detail

/// Emits metrics.csv, cost.csv, and exit_distribution.csv into out_dir.
inline void write_report_csvs(const std::vector<nlohmann::json>& reports,
                              const std::string& out_dir) {
    if (reports.empty()) throw ConfigError("report: no input reports");

    std::ofstream metrics(out_dir + "/metrics.csv", std::ios::binary);
    std::ofstream cost(out_dir + "/cost.csv", std::ios::binary);
    std::ofstream dist(out_dir + "/exit_distribution.csv", std::ios::binary);
    if (!metrics || !cost || !dist)
        throw ParseError("report: cannot write CSVs under " + out_dir);

    metrics << "model,macro_f1,macro_f1_present,accuracy\n";
    cost << "model,exit,cumulative_params,cumulative_flops\n";
    dist << "model,exit,percent,expected_flops\n";

    for (const auto& j : reports) {
        std::string model = j.at("model").get<std::string>();
        metrics << model << ',' << detail::csv_num(j.at("macro_f1").get<double>()) << ','
                << detail::csv_num(j.value("macro_f1_present", 0.0)) << ','
                << detail::csv_num(j.at("accuracy").get<double>()) << '\n';

        const auto& c = j.at("cost");
        for (const auto& pe : c.at("per_exit"))
            cost << model << ',' << pe.at("exit").get<std::size_t>() << ','
                 << pe.at("cumulative_params").get<std::uint64_t>() << ','
                 << pe.at("cumulative_flops").get<std::uint64_t>() << '\n';
        cost << model << ",baseline," << c.at("baseline_params").get<std::uint64_t>()
             << ',' << c.at("baseline_flops").get<std::uint64_t>() << '\n';

        auto probs = j.at("exit_distribution").get<std::vector<double>>();
        double expected = j.at("expected_flops").get<double>();
        for (std::size_t n = 0; n < probs.size(); ++n)
            dist << model << ',' << n + 1 << ',' << detail::csv_num(100.0 * probs[n])
                 << ',' << detail::csv_num(expected) << '\n';
    }
}

}  // namespace branchy
