#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "branchy/engine.hpp"
#include "branchy/errors.hpp"

namespace branchy {

/// Empirical fraction of queries egressing at each exit point.
struct ExitDistribution {
    std::vector<double> probs;
};

struct CostReport {
    struct PerExit {
        std::uint64_t cumulative_params = 0;
        std::uint64_t cumulative_flops = 0;
    };
    std::vector<PerExit> per_exit;
    std::uint64_t baseline_params = 0;  // backbone + final output layer only
    std::uint64_t baseline_flops = 0;
    std::size_t seq_len_assumed = 1;    // LSTM only
};

namespace detail {

inline std::uint64_t layer_params(ModelKind kind, LayerDims d) {
    auto in = static_cast<std::uint64_t>(d.in);
    auto out = static_cast<std::uint64_t>(d.out);
    if (kind == ModelKind::kDnn) return in * out + out;
    return 4 * (in * out + out * out + out);
}

inline std::uint64_t layer_flops(ModelKind kind, LayerDims d, std::uint64_t seq_len) {
    auto in = static_cast<std::uint64_t>(d.in);
    auto out = static_cast<std::uint64_t>(d.out);
    if (kind == ModelKind::kDnn) return in * out;
    return seq_len * 4 * (in * out + out * out);
}

inline void check_exit_index(const BranchyModel& model, std::size_t upto_exit) {
    if (upto_exit < 1 || upto_exit > model.n_exits())
        throw IndexError("exit index " + std::to_string(upto_exit) +
                         " out of range 1.." + std::to_string(model.n_exits()));
}

}  // namespace detail

/// Parameters of backbone layers 1..upto_exit plus exit heads 1..upto_exit.
/// Dense in->out contributes in*out + out; an LSTM cell 4*(in*h + h*h + h).
/// The embedding table is excluded unless requested.
inline std::uint64_t count_params(const BranchyModel& model, std::size_t upto_exit,
                                  bool include_embedding = false) {
    detail::check_exit_index(model, upto_exit);
    auto dims = detail::backbone_dims(model);
    std::uint64_t total = 0;
    if (include_embedding)
        total += static_cast<std::uint64_t>(model.embedding.vocab_size) *
                 model.embedding.dim;
    for (std::size_t n = 0; n < upto_exit; ++n) {
        total += detail::layer_params(model.kind, dims[n]);
        const auto& head = model.heads[n];
        total += static_cast<std::uint64_t>(head.W.shape()[0]) * head.W.shape()[1] +
                 head.b.size();
    }
    return total;
}

/// FLOPs to reach exit upto_exit under the 1-MAC = 1-FLOP convention:
/// dense layers cost in*out, an LSTM cell 4*(in*h + h*h) per time step, and
/// exit head n costs feature_dim*C plus C + feature_dim (softmax + entropy).
inline std::uint64_t count_flops(const BranchyModel& model, std::size_t upto_exit,
                                 std::size_t seq_len) {
    detail::check_exit_index(model, upto_exit);
    if (seq_len < 1) throw ConfigError("count_flops: seq_len must be >= 1");
    auto dims = detail::backbone_dims(model);
    std::uint64_t total = 0;
    for (std::size_t n = 0; n < upto_exit; ++n) {
        total += detail::layer_flops(model.kind, dims[n], seq_len);
        const auto& head = model.heads[n];
        std::uint64_t fd = head.W.shape()[0], c = head.W.shape()[1];
        total += fd * c + c + fd;
    }
    return total;
}

/// Exit-distribution-weighted expected FLOPs.
inline double expected_complexity(const std::vector<double>& flops_per_exit,
                                  const ExitDistribution& dist) {
    if (flops_per_exit.size() != dist.probs.size())
        throw ConfigError("expected_complexity: " +
                          std::to_string(flops_per_exit.size()) + " exits vs " +
                          std::to_string(dist.probs.size()) + " distribution entries");
    double sum = 0.0, e = 0.0;
    for (std::size_t n = 0; n < dist.probs.size(); ++n) {
        if (dist.probs[n] < 0.0)
            throw ConfigError("expected_complexity: negative exit probability");
        sum += dist.probs[n];
        e += dist.probs[n] * flops_per_exit[n];
    }
    // loose tolerance: published exit distributions are rounded to 4 decimals
    if (std::abs(sum - 1.0) > 1e-2)
        throw ConfigError("expected_complexity: exit distribution does not sum to 1");
    return e;
}

inline double relative_savings(double expected, double baseline) {
    if (!(baseline > 0.0))
        throw ConfigError("relative_savings: baseline must be positive");
    return (baseline - expected) / baseline;
}

inline ExitDistribution measure_exit_distribution(const BranchyModel& model,
                                                  const Dataset& data) {
    if (data.examples.empty())
        throw ConfigError("measure_exit_distribution: empty dataset");
    std::vector<std::size_t> counts(model.n_exits(), 0);
    for (const auto& ex : data.examples) {
        ExitTrace t = infer_early_exit(model, ex.tokens);
        ++counts[t.chosen_exit - 1];
    }
    ExitDistribution d;
    for (std::size_t c : counts)
        d.probs.push_back(static_cast<double>(c) / static_cast<double>(data.size()));
    return d;
}

/// Baseline = full backbone plus a single final output layer (affine +
/// softmax), i.e. the same architecture without the BranchyNet mechanism.
inline CostReport build_cost_report(const BranchyModel& model, std::size_t seq_len,
                                    bool include_embedding = false) {
    CostReport r;
    r.seq_len_assumed = seq_len;
    std::size_t n_exits = model.n_exits();
    for (std::size_t n = 1; n <= n_exits; ++n) {
        CostReport::PerExit pe;
        pe.cumulative_params = count_params(model, n, include_embedding);
        pe.cumulative_flops = count_flops(model, n, seq_len);
        r.per_exit.push_back(pe);
    }
    auto dims = detail::backbone_dims(model);
    for (auto d : dims) {
        r.baseline_params += detail::layer_params(model.kind, d);
        r.baseline_flops += detail::layer_flops(model.kind, d, seq_len);
    }
    const auto& last_head = model.heads.back();
    std::uint64_t fd = last_head.W.shape()[0], c = last_head.W.shape()[1];
    r.baseline_params += fd * c + c;
    r.baseline_flops += fd * c + c;  // affine + softmax, no entropy comparison
    if (include_embedding)
        r.baseline_params +=
            static_cast<std::uint64_t>(model.embedding.vocab_size) * model.embedding.dim;
    return r;
}

}  // namespace branchy
