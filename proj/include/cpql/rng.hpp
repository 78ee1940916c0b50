#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>

#include <Eigen/Dense>

namespace cpql {

/// One SplitMix64 step. Advances `state` and returns the next value.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Derives the seed of substream `index` from a master seed.
/// Constants are fixed; results must not change between releases because
/// output files are expected to be byte-reproducible.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t s = master;
    const std::uint64_t a = splitmix64_next(s);
    s = a ^ (index + 0x9E3779B97F4A7C15ULL);
    return splitmix64_next(s);
}

/// Deterministic RNG with portable draw helpers.
/// std::mt19937_64 has a fixed cross-platform stream; the distributions
/// below are hand-rolled because the standard ones are not portable.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    /// Uniform double in [0,1), 53-bit resolution.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    int uniform_int(int n) {
        if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
        int v = static_cast<int>(uniform() * n);
        return v < n ? v : n - 1;
    }

    std::int64_t uniform_int64(std::int64_t n) {
        if (n <= 0) throw std::invalid_argument("uniform_int64: n must be positive");
        auto v = static_cast<std::int64_t>(uniform() * static_cast<double>(n));
        return v < n ? v : n - 1;
    }

    /// Samples an index from a probability vector by inverse CDF.
    int categorical(const Eigen::VectorXd& probs) {
        const double u = uniform();
        double acc = 0.0;
        for (int i = 0; i < probs.size(); ++i) {
            acc += probs[i];
            if (u < acc) return i;
        }
        // Mass can fall fractionally short of 1; return the last index.
        return static_cast<int>(probs.size()) - 1;
    }

    std::uint64_t raw() { return eng_(); }

private:
    std::mt19937_64 eng_;
};

}  // namespace cpql
