#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "branchy/errors.hpp"

namespace branchy {

/// Multiply-accumulate counter threaded through the tape-free inference path.
/// One MAC = one FLOP under the reporting convention; a softmax over C
/// classes is charged C and the entropy comparison at an exit head is
/// charged feature_dim by the caller.
struct MacCounter {
    std::uint64_t macs = 0;
};

namespace kernels {

/// y = x @ W for flat row-major W[in x out]; charges in*out MACs.
inline void matvec(const double* x, const double* W, std::size_t in, std::size_t out,
                   double* y, MacCounter* mc) {
    for (std::size_t j = 0; j < out; ++j) y[j] = 0.0;
    for (std::size_t k = 0; k < in; ++k) {
        double xk = x[k];
        const double* wr = W + k * out;
        for (std::size_t j = 0; j < out; ++j) y[j] += xk * wr[j];
    }
    if (mc) mc->macs += static_cast<std::uint64_t>(in) * out;
}

inline void add_inplace(double* y, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += b[i];
}

inline void relu_inplace(double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = std::max(0.0, y[i]);
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

/// Max-subtracted softmax; charges C MACs.
inline std::vector<double> softmax(const std::vector<double>& logits, MacCounter* mc) {
    double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        z += p[i];
    }
    for (double& v : p) v /= z;
    if (mc) mc->macs += static_cast<std::uint64_t>(p.size());
    return p;
}

inline std::size_t argmax(const std::vector<double>& v) {
    // Ties break toward the lowest index.
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

}  // namespace kernels

/// Shannon entropy in nats, with 0*ln(0) == 0.
inline double entropy(const std::vector<double>& probs) {
    double h = 0.0;
    for (double p : probs)
        if (p > 0.0) h -= p * std::log(p);
    return h;
}

}  // namespace branchy
