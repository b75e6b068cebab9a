#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "magnet/dynamics.hpp"
#include "magnet/random.hpp"
#include "magnet/standardize.hpp"

namespace magnet {

// Total-variation regularized differentiation of a scalar series y sampled at
// period dt: minimize over the derivative series u
//     alpha * sum_k sqrt((Du)_k^2 + eps^2) + 1/2 ||A u - (y - y_0)||^2
// where A is trapezoidal cumulative integration and (Du)_k =
// (u_{k+1} - u_k)/dt. Solved by lagged-diffusivity fixed point; each inner
// system runs preconditioned conjugate gradients warm-started at the current
// iterate, which keeps the smoothed objective non-increasing.
struct TVConfig {
    double alpha = 1e-2;
    std::size_t iterations = 200;
    double eps = 1e-8;  // smoothing of |Du|
    std::size_t cg_max_iters = 60;
    double cg_tol = 1e-14;

    void validate() const {
        if (alpha <= 0.0) throw std::invalid_argument("TVConfig: alpha must be > 0");
        if (iterations < 1) throw std::invalid_argument("TVConfig: need at least one iteration");
        if (eps <= 0.0) throw std::invalid_argument("TVConfig: eps must be > 0");
    }
};

namespace tv_detail {

// (A u)_k = dt * (u_0/2 + u_1 + ... + u_{k-1} + u_k/2), (A u)_0 = 0.
inline void apply_A(const std::vector<double>& u, double dt, std::vector<double>& out) {
    const std::size_t n = u.size();
    out.assign(n, 0.0);
    double run = 0.5 * u[0];
    for (std::size_t k = 1; k < n; ++k) {
        run += 0.5 * u[k];
        out[k] = dt * run;
        run += 0.5 * u[k];
    }
}

inline void apply_At(const std::vector<double>& r, double dt, std::vector<double>& out) {
    const std::size_t n = r.size();
    out.assign(n, 0.0);
    // suffix[j] = sum_{k >= j} r_k, computed right-to-left
    std::vector<double> suffix(n + 1, 0.0);
    for (std::size_t j = n; j-- > 0;) suffix[j] = suffix[j + 1] + r[j];
    out[0] = dt * 0.5 * suffix[1];
    for (std::size_t j = 1; j < n; ++j) out[j] = dt * (0.5 * r[j] + suffix[j + 1]);
}

// D^T diag(w) D u with the 1/dt^2 difference scaling folded into the weights.
inline void apply_L(const std::vector<double>& u, const std::vector<double>& w_scaled,
                    std::vector<double>& out) {
    const std::size_t n = u.size();
    out.assign(n, 0.0);
    for (std::size_t k = 0; k + 1 < n; ++k) {
        const double g = w_scaled[k] * (u[k + 1] - u[k]);
        out[k] -= g;
        out[k + 1] += g;
    }
}

inline double smoothed_objective(const std::vector<double>& u, const std::vector<double>& b,
                                 double dt, double alpha, double eps) {
    std::vector<double> au;
    apply_A(u, dt, au);
    double data = 0.0;
    for (std::size_t k = 0; k < b.size(); ++k) {
        const double r = au[k] - b[k];
        data += r * r;
    }
    double tv = 0.0;
    for (std::size_t k = 0; k + 1 < u.size(); ++k) {
        const double d = (u[k + 1] - u[k]) / dt;
        tv += std::sqrt(d * d + eps * eps);
    }
    return alpha * tv + 0.5 * data;
}

}  // namespace tv_detail

inline std::vector<double> tv_differentiate(const std::vector<double>& samples, double dt,
                                            const TVConfig& config) {
    config.validate();
    const std::size_t n = samples.size();
    if (n < 3) throw std::invalid_argument("tv_differentiate: series length must be >= 3");
    if (dt <= 0.0) throw std::invalid_argument("tv_differentiate: dt must be > 0");

    std::vector<double> b(n);
    for (std::size_t k = 0; k < n; ++k) b[k] = samples[k] - samples[0];

    // start from plain finite differences
    std::vector<double> u(n);
    u[0] = (samples[1] - samples[0]) / dt;
    for (std::size_t k = 1; k + 1 < n; ++k) u[k] = (samples[k + 1] - samples[k - 1]) / (2.0 * dt);
    u[n - 1] = (samples[n - 1] - samples[n - 2]) / dt;

    std::vector<double> atb;
    tv_detail::apply_At(b, dt, atb);

    // diag(A^T A), part of the tridiagonal preconditioner
    std::vector<double> ata_diag(n);
    ata_diag[0] = static_cast<double>(n - 1) * 0.25 * dt * dt;
    for (std::size_t j = 1; j < n; ++j)
        ata_diag[j] = (0.25 + static_cast<double>(n - 1 - j)) * dt * dt;

    std::vector<double> w(n - 1);
    std::vector<double> tmp1, tmp2, r(n), z(n), p(n), hp(n);
    double best_obj = tv_detail::smoothed_objective(u, b, dt, config.alpha, config.eps);

    for (std::size_t iter = 0; iter < config.iterations; ++iter) {
        // lagged-diffusivity weights, with the 1/dt^2 of D^T D folded in
        for (std::size_t k = 0; k + 1 < n; ++k) {
            const double d = (u[k + 1] - u[k]) / dt;
            w[k] = config.alpha / (std::sqrt(d * d + config.eps * config.eps) * dt * dt);
        }
        auto apply_H = [&](const std::vector<double>& v, std::vector<double>& out) {
            tv_detail::apply_A(v, dt, tmp1);
            tv_detail::apply_At(tmp1, dt, out);
            tv_detail::apply_L(v, w, tmp2);
            for (std::size_t k = 0; k < n; ++k) out[k] += tmp2[k];
        };

        // tridiagonal preconditioner: alpha D^T W D + diag(A^T A)
        std::vector<double> pd(n), po(n - 1);
        for (std::size_t k = 0; k < n; ++k) pd[k] = ata_diag[k];
        for (std::size_t k = 0; k + 1 < n; ++k) {
            pd[k] += w[k];
            pd[k + 1] += w[k];
            po[k] = -w[k];
        }
        // LDL^T factorization of the tridiagonal preconditioner
        std::vector<double> ld(n), lo(n - 1);
        ld[0] = pd[0];
        for (std::size_t k = 1; k < n; ++k) {
            lo[k - 1] = po[k - 1] / ld[k - 1];
            ld[k] = pd[k] - lo[k - 1] * po[k - 1];
        }
        auto precond = [&](const std::vector<double>& rhs, std::vector<double>& x) {
            x = rhs;
            for (std::size_t k = 1; k < n; ++k) x[k] -= lo[k - 1] * x[k - 1];
            for (std::size_t k = 0; k < n; ++k) x[k] /= ld[k];
            for (std::size_t k = n - 1; k-- > 0;) x[k] -= lo[k] * x[k + 1];
        };

        // PCG on H x = A^T b, warm-started at the current u
        std::vector<double> x = u;
        apply_H(x, hp);
        double rz = 0.0;
        for (std::size_t k = 0; k < n; ++k) r[k] = atb[k] - hp[k];
        precond(r, z);
        for (std::size_t k = 0; k < n; ++k) rz += r[k] * z[k];
        const double rz0 = rz;
        p = z;
        for (std::size_t cg = 0;
             cg < config.cg_max_iters && rz > config.cg_tol * (rz0 + 1e-300) && rz > 0.0; ++cg) {
            apply_H(p, hp);
            double php = 0.0;
            for (std::size_t k = 0; k < n; ++k) php += p[k] * hp[k];
            if (php <= 0.0) break;
            const double step = rz / php;
            for (std::size_t k = 0; k < n; ++k) {
                x[k] += step * p[k];
                r[k] -= step * hp[k];
            }
            precond(r, z);
            double rz_next = 0.0;
            for (std::size_t k = 0; k < n; ++k) rz_next += r[k] * z[k];
            const double beta = rz_next / rz;
            for (std::size_t k = 0; k < n; ++k) p[k] = z[k] + beta * p[k];
            rz = rz_next;
        }
        for (double v : x)
            if (!std::isfinite(v))
                throw std::runtime_error("tv_differentiate: iteration diverged at step " +
                                         std::to_string(iter));
        const double obj = tv_detail::smoothed_objective(x, b, dt, config.alpha, config.eps);
        if (obj <= best_obj) {
            u = std::move(x);
            best_obj = obj;
        }
    }
    return u;
}

// Adds zero-mean Gaussian noise to every state channel; per-dimension noise
// std is sigma_scale times the clean per-dimension std of the dataset.
// Sequence s draws from the sub-seed seed^s.
inline Dataset add_gaussian_noise(const Dataset& ds, double sigma_scale, std::uint64_t seed) {
    if (sigma_scale < 0.0) throw std::invalid_argument("add_gaussian_noise: negative scale");
    Dataset out = ds;
    if (sigma_scale == 0.0) return out;
    const Standardizer z = fit_standardizer(ds);
    const std::size_t d = ds.state_dim;
    for (std::size_t s = 0; s < ds.num_sequences; ++s) {
        Rng rng(sequence_seed(seed, s));
        for (std::size_t t = 0; t < ds.seq_length; ++t) {
            auto st = out.state_at(s, t);
            for (std::size_t a = 0; a < ds.n_agents; ++a)
                for (std::size_t k = 0; k < d; ++k)
                    st[a * d + k] += sigma_scale * z.stddev[k] * rng.normal();
        }
    }
    return out;
}

enum class PrepareMode { training, evaluation };

// Observed (noisy) positions of one sequence: [time][agent][pos_dim] flat.
struct PositionSeries {
    std::size_t n_agents = 0;
    std::size_t pos_dim = 0;
    std::size_t length = 0;
    std::vector<double> values;

    double at(std::size_t t, std::size_t a, std::size_t k) const {
        return values[(t * n_agents + a) * pos_dim + k];
    }
};

inline constexpr std::size_t kEvalPrefixLength = 16;

// Builds full states from observed positions: position channels pass through,
// velocity channels are TV-differentiated positions. In evaluation mode the
// input must be exactly the 16-observation prefix; the state at its last
// sample is the rollout initial condition.
struct PreparedStates {
    std::size_t n_agents = 0;
    std::size_t state_dim = 0;  // 2 * pos_dim
    std::size_t length = 0;
    std::vector<double> states;  // [time][agent][state_dim]

    std::vector<double> state_at(std::size_t t) const {
        const std::size_t w = n_agents * state_dim;
        return {states.begin() + t * w, states.begin() + (t + 1) * w};
    }
    std::vector<double> last_state() const { return state_at(length - 1); }
};

inline PreparedStates prepare_noisy_states(const PositionSeries& positions, double dt,
                                           const TVConfig& config, PrepareMode mode);

// Training dataset for the noisy regime: position channels carry the
// observation noise, velocity channels are rebuilt from the noisy positions
// by TV differentiation, sequence by sequence. Requires second-order states
// laid out (positions..., velocities...) per agent.
inline Dataset make_noisy_observation_dataset(const Dataset& clean, double sigma_scale,
                                              std::uint64_t seed, const TVConfig& tv) {
    if (clean.state_dim % 2 != 0)
        throw std::invalid_argument(
            "make_noisy_observation_dataset: needs second-order (position, velocity) states");
    const std::size_t pos_dim = clean.state_dim / 2;
    const Dataset noisy = add_gaussian_noise(clean, sigma_scale, seed);
    Dataset out = noisy;
    PositionSeries series;
    series.n_agents = clean.n_agents;
    series.pos_dim = pos_dim;
    series.length = clean.seq_length;
    series.values.resize(series.length * series.n_agents * pos_dim);
    for (std::size_t s = 0; s < clean.num_sequences; ++s) {
        for (std::size_t t = 0; t < series.length; ++t) {
            auto st = noisy.state_at(s, t);
            for (std::size_t a = 0; a < series.n_agents; ++a)
                for (std::size_t k = 0; k < pos_dim; ++k)
                    series.values[(t * series.n_agents + a) * pos_dim + k] =
                        st[a * clean.state_dim + k];
        }
        const PreparedStates prep =
            prepare_noisy_states(series, clean.dt, tv, PrepareMode::training);
        for (std::size_t t = 0; t < series.length; ++t) {
            auto dst = out.state_at(s, t);
            const double* src = prep.states.data() + t * series.n_agents * clean.state_dim;
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = src[k];
        }
    }
    return out;
}

inline PreparedStates prepare_noisy_states(const PositionSeries& positions, double dt,
                                           const TVConfig& config,
                                           PrepareMode mode = PrepareMode::training) {
    if (mode == PrepareMode::evaluation && positions.length != kEvalPrefixLength)
        throw std::invalid_argument("prepare_noisy_states: evaluation mode needs exactly " +
                                    std::to_string(kEvalPrefixLength) + " observations, got " +
                                    std::to_string(positions.length));
    if (positions.length < 3)
        throw std::invalid_argument("prepare_noisy_states: need at least 3 observations");
    PreparedStates out;
    out.n_agents = positions.n_agents;
    out.state_dim = 2 * positions.pos_dim;
    out.length = positions.length;
    out.states.assign(out.length * out.n_agents * out.state_dim, 0.0);
    std::vector<double> series(positions.length);
    for (std::size_t a = 0; a < positions.n_agents; ++a)
        for (std::size_t k = 0; k < positions.pos_dim; ++k) {
            for (std::size_t t = 0; t < positions.length; ++t) series[t] = positions.at(t, a, k);
            const std::vector<double> vel = tv_differentiate(series, dt, config);
            for (std::size_t t = 0; t < positions.length; ++t) {
                double* st = out.states.data() + (t * out.n_agents + a) * out.state_dim;
                st[k] = series[t];
                st[positions.pos_dim + k] = vel[t];
            }
        }
    return out;
}

}  // namespace magnet
