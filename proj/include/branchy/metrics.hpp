#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "branchy/errors.hpp"

namespace branchy {

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

inline double accuracy(const std::vector<std::size_t>& predictions,
                       const std::vector<std::size_t>& gold) {
    if (predictions.size() != gold.size() || predictions.empty())
        throw ConfigError("accuracy: prediction/gold length mismatch or empty");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < gold.size(); ++i)
        if (predictions[i] == gold[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(gold.size());
}

/// Per-class precision/recall/F1 with any 0/0 ratio defined as 0.
inline std::vector<ClassMetrics> per_class_metrics(
    const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& gold,
    std::size_t n_classes) {
    if (predictions.size() != gold.size() || predictions.empty())
        throw ConfigError("per_class_metrics: prediction/gold length mismatch or empty");
    std::vector<std::size_t> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0),
        support(n_classes, 0);
    for (std::size_t i = 0; i < gold.size(); ++i) {
        std::size_t p = predictions[i], g = gold[i];
        if (p >= n_classes || g >= n_classes)
            throw IndexError("per_class_metrics: class index out of range");
        ++support[g];
        if (p == g) {
            ++tp[g];
        } else {
            ++fp[p];
            ++fn[g];
        }
    }
    std::vector<ClassMetrics> out(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) {
        ClassMetrics& m = out[c];
        m.support = support[c];
        std::size_t pd = tp[c] + fp[c], gd = tp[c] + fn[c];
        m.precision = pd ? static_cast<double>(tp[c]) / static_cast<double>(pd) : 0.0;
        m.recall = gd ? static_cast<double>(tp[c]) / static_cast<double>(gd) : 0.0;
        double pr = m.precision + m.recall;
        m.f1 = pr > 0.0 ? 2.0 * m.precision * m.recall / pr : 0.0;
    }
    return out;
}

/// Unweighted mean of per-class F1 over all C classes, zero-support classes
/// included (their F1 counts as 0).
inline double macro_f1(const std::vector<std::size_t>& predictions,
                       const std::vector<std::size_t>& gold, std::size_t n_classes) {
    auto per = per_class_metrics(predictions, gold, n_classes);
    double sum = 0.0;
    for (const auto& m : per) sum += m.f1;
    return sum / static_cast<double>(n_classes);
}

/// Macro F1 restricted to classes that actually occur in the gold labels.
inline double macro_f1_present(const std::vector<std::size_t>& predictions,
                               const std::vector<std::size_t>& gold,
                               std::size_t n_classes) {
    auto per = per_class_metrics(predictions, gold, n_classes);
    double sum = 0.0;
    std::size_t present = 0;
    for (const auto& m : per)
        if (m.support > 0) {
            sum += m.f1;
            ++present;
        }
    return present ? sum / static_cast<double>(present) : 0.0;
}

}  // namespace branchy
