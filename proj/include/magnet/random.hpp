#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace magnet {

// 64-bit mixing step used for seed derivation and domain separation.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Deterministic random stream. Wraps std::mt19937_64 (bit-exact per the
// standard) and maps its output with fixed arithmetic, so sequences are
// identical across platforms given the same seed. std distributions are
// deliberately avoided: their output is implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t bits() { return eng_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform01() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Standard normal via Box-Muller; the second value of each pair is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Unbiased integer in [0, n) by masked rejection.
    std::uint64_t below(std::uint64_t n) {
        if (n <= 1) return 0;
        std::uint64_t mask = n - 1;
        mask |= mask >> 1;
        mask |= mask >> 2;
        mask |= mask >> 4;
        mask |= mask >> 8;
        mask |= mask >> 16;
        mask |= mask >> 32;
        for (;;) {
            const std::uint64_t x = bits() & mask;
            if (x < n) return x;
        }
    }

    // Fisher-Yates with pinned draw order (std::shuffle is not portable).
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Per-sequence sub-seed: dataset seed XOR sequence index.
inline std::uint64_t sequence_seed(std::uint64_t dataset_seed, std::uint64_t index) {
    return dataset_seed ^ index;
}

// Separate stream for per-dataset physical parameters so it never collides
// with the sequence streams (seed ^ 0 equals the dataset seed itself).
inline std::uint64_t parameter_seed(std::uint64_t dataset_seed) {
    return splitmix64(dataset_seed ^ 0xA5C0FFEE5EEDULL);
}

}  // namespace magnet
