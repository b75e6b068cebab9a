#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "magnet/dynamics.hpp"

namespace magnet {

// Per-state-dimension affine map to zero mean, unit variance, fitted on
// training data (population convention). Constant dimensions keep their mean
// but have the scale clamped to 1 so the map stays invertible.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> stddev;

    std::size_t dims() const { return mean.size(); }

    double forward1(double v, std::size_t dim) const { return (v - mean[dim]) / stddev[dim]; }
    double inverse1(double v, std::size_t dim) const { return v * stddev[dim] + mean[dim]; }

    // In-place transform of a flat [... agent][dim] buffer.
    void forward(std::span<double> states) const { apply(states, true); }
    void inverse(std::span<double> states) const { apply(states, false); }

private:
    void apply(std::span<double> states, bool fwd) const {
        const std::size_t d = dims();
        if (d == 0) throw std::runtime_error("Standardizer: not fitted");
        if (states.size() % d != 0)
            throw std::invalid_argument("Standardizer: buffer length not a multiple of dims");
        for (std::size_t i = 0; i < states.size(); ++i) {
            const std::size_t k = i % d;
            states[i] = fwd ? forward1(states[i], k) : inverse1(states[i], k);
        }
    }
};

inline constexpr double kStdClamp = 1e-12;

// Pooled over sequences, timesteps and agents; one statistic per state dim.
inline Standardizer fit_standardizer(const Dataset& ds,
                                     const std::vector<std::size_t>& sequences = {}) {
    if (ds.states.empty() || ds.num_sequences == 0)
        throw std::invalid_argument("fit_standardizer: empty dataset");
    std::vector<std::size_t> seqs = sequences;
    if (seqs.empty())
        for (std::size_t s = 0; s < ds.num_sequences; ++s) seqs.push_back(s);
    const std::size_t d = ds.state_dim;
    std::vector<double> sum(d, 0.0), sumsq(d, 0.0);
    std::size_t count = 0;
    for (std::size_t s : seqs) {
        if (s >= ds.num_sequences) throw std::invalid_argument("fit_standardizer: bad sequence");
        for (std::size_t t = 0; t < ds.seq_length; ++t) {
            auto st = ds.state_at(s, t);
            for (std::size_t a = 0; a < ds.n_agents; ++a)
                for (std::size_t k = 0; k < d; ++k) {
                    const double v = st[a * d + k];
                    sum[k] += v;
                    sumsq[k] += v * v;
                }
        }
        count += ds.seq_length * ds.n_agents;
    }
    Standardizer z;
    z.mean.resize(d);
    z.stddev.resize(d);
    for (std::size_t k = 0; k < d; ++k) {
        const double mu = sum[k] / static_cast<double>(count);
        double var = sumsq[k] / static_cast<double>(count) - mu * mu;
        if (var < 0.0) var = 0.0;
        double sd = std::sqrt(var);
        if (sd < kStdClamp) sd = 1.0;
        z.mean[k] = mu;
        z.stddev[k] = sd;
    }
    return z;
}

enum class TransformDirection { forward, inverse };

inline void apply_standardizer(std::span<double> states, const Standardizer& z,
                               TransformDirection dir) {
    if (dir == TransformDirection::forward)
        z.forward(states);
    else
        z.inverse(states);
}

// Returns a copy of the dataset with every state standardized.
inline Dataset standardize_dataset(const Dataset& ds, const Standardizer& z) {
    if (z.dims() != ds.state_dim)
        throw std::invalid_argument("standardize_dataset: dimension mismatch");
    Dataset out = ds;
    z.forward(std::span<double>(out.states));
    return out;
}

}  // namespace magnet
