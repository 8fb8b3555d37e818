#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace branchy {

/// Deterministic RNG. std::mt19937_64 output is fully specified by the
/// standard, and the [0,1) mapping below avoids std::uniform_real_distribution
/// whose results are implementation-defined. Identical seeds therefore give
/// bit-identical streams on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform double in [0, 1) with 53 bits of entropy.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform index in [0, n). Modulo bias is negligible for the small n
    /// used here and keeps the draw deterministic.
    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>(gen_() % static_cast<std::uint64_t>(n));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = index(i + 1);
            std::swap(v[i], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace branchy
