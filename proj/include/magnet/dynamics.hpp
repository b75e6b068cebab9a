#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "magnet/random.hpp"

namespace magnet {

enum class SystemId : std::uint8_t { point_mass = 0, kuramoto = 1, predator_swarm = 2 };

inline const char* system_name(SystemId id) {
    switch (id) {
        case SystemId::point_mass: return "point_mass";
        case SystemId::kuramoto: return "kuramoto";
        case SystemId::predator_swarm: return "predator_swarm";
    }
    return "?";
}

struct Range {
    double lo = 0.0;
    double hi = 1.0;
};

// Pairwise springs plus a clipped inverse-square repulsion, integrated under
// Newton's second law. State per agent: (px, py, vx, vy).
struct PointMassSpec {
    std::size_t n_agents = 4;
    std::vector<double> masses;  // N, drawn at generation when empty
    std::vector<double> spring;  // N*N, symmetric, zero diagonal
    double repulsion = 1.0;      // K
    double clip = 10.0;          // lambda, keeps the repulsion denominator away from zero
    double dt = 0.01;
    std::size_t substeps = 10;
    Range mass_range{0.5, 2.5};
    Range spring_range{0.5, 2.0};
    Range position_range{-2.0, 2.0};
    Range velocity_range{-1.0, 1.0};

    std::size_t state_dim() const { return 4; }

    void validate() const {
        if (n_agents < 1) throw std::invalid_argument("point-mass: need at least one agent");
        if (clip <= 0.0) throw std::invalid_argument("point-mass: clip constant must be > 0");
        if (repulsion < 0.0) throw std::invalid_argument("point-mass: repulsion must be >= 0");
        if (!masses.empty()) {
            if (masses.size() != n_agents)
                throw std::invalid_argument("point-mass: mass count != agent count");
            for (double m : masses)
                if (m <= 0.0) throw std::invalid_argument("point-mass: non-positive mass");
            if (spring.size() != n_agents * n_agents)
                throw std::invalid_argument("point-mass: spring matrix must be N*N");
            for (std::size_t i = 0; i < n_agents; ++i) {
                if (spring[i * n_agents + i] != 0.0)
                    throw std::invalid_argument("point-mass: spring diagonal must be zero");
                for (std::size_t j = 0; j < n_agents; ++j)
                    if (spring[i * n_agents + j] != spring[j * n_agents + i])
                        throw std::invalid_argument("point-mass: spring matrix must be symmetric");
            }
        }
    }
};

// d theta_i/dt = omega_i + sum_j K_ij sin(theta_j - theta_i). State: (theta).
struct KuramotoSpec {
    std::size_t n_agents = 8;
    std::vector<double> omega;     // N natural frequencies
    std::vector<double> coupling;  // N*N, symmetric, zero diagonal
    double dt = 0.01;
    std::size_t substeps = 10;
    Range omega_range{1.0, 10.0};
    Range coupling_range{0.2, 2.0};

    std::size_t state_dim() const { return 1; }

    void validate() const {
        if (n_agents < 1) throw std::invalid_argument("kuramoto: need at least one oscillator");
        if (!omega.empty()) {
            if (omega.size() != n_agents)
                throw std::invalid_argument("kuramoto: omega count != oscillator count");
            if (coupling.size() != n_agents * n_agents)
                throw std::invalid_argument("kuramoto: coupling matrix must be N*N");
            for (std::size_t i = 0; i < n_agents; ++i) {
                if (coupling[i * n_agents + i] != 0.0)
                    throw std::invalid_argument("kuramoto: coupling diagonal must be zero");
                for (std::size_t j = 0; j < n_agents; ++j)
                    if (coupling[i * n_agents + j] != coupling[j * n_agents + i])
                        throw std::invalid_argument("kuramoto: coupling must be symmetric");
            }
        }
    }
};

// Minimal prey-swarm model with one predator. The simulated agents are
// n_prey preys followed by the predator, each with state (x, y).
struct PredatorSwarmSpec {
    std::size_t n_prey = 20;
    double a = 1.0;
    double b = 0.2;
    double c = 1.5;
    double collision_eps = 1e-6;  // lower bound on pair distances
    double dt = 0.01;
    std::size_t substeps = 10;
    Range prey_position_range{-1.0, 1.0};
    Range predator_position_range{-0.25, 0.25};

    std::size_t n_agents() const { return n_prey + 1; }
    std::size_t state_dim() const { return 2; }

    void validate() const {
        if (n_prey < 1) throw std::invalid_argument("predator-swarm: need at least one prey");
        if (a <= 0.0 || b <= 0.0 || c <= 0.0)
            throw std::invalid_argument("predator-swarm: a, b, c must be > 0");
        if (collision_eps <= 0.0)
            throw std::invalid_argument("predator-swarm: collision guard must be > 0");
    }
};

using SystemSpec = std::variant<PointMassSpec, KuramotoSpec, PredatorSwarmSpec>;

inline SystemId system_id(const SystemSpec& spec) {
    if (std::holds_alternative<PointMassSpec>(spec)) return SystemId::point_mass;
    if (std::holds_alternative<KuramotoSpec>(spec)) return SystemId::kuramoto;
    return SystemId::predator_swarm;
}

inline std::size_t spec_agents(const SystemSpec& spec) {
    return std::visit(
        [](const auto& s) -> std::size_t {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, PredatorSwarmSpec>)
                return s.n_agents();
            else
                return s.n_agents;
        },
        spec);
}

inline std::size_t spec_state_dim(const SystemSpec& spec) {
    return std::visit([](const auto& s) { return s.state_dim(); }, spec);
}

inline double spec_dt(const SystemSpec& spec) {
    return std::visit([](const auto& s) { return s.dt; }, spec);
}

// Accelerations from pairwise forces
//   F_ij = -k_ij (p_i - p_j) + K m_i m_j (p_i - p_j) / (lambda + |p_i - p_j|)^3
// with a_i = (1/m_i) sum_{j != i} F_ij. Forces are exactly antisymmetric for
// a symmetric spring matrix, so total momentum is conserved.
inline std::vector<double> point_mass_deriv(const std::vector<double>& positions,
                                            const std::vector<double>& velocities,
                                            const PointMassSpec& spec) {
    const std::size_t n = spec.n_agents;
    if (positions.size() != 2 * n || velocities.size() != 2 * n)
        throw std::invalid_argument("point_mass_deriv: expected N x 2 positions and velocities");
    spec.validate();
    if (spec.masses.empty())
        throw std::invalid_argument("point_mass_deriv: physical parameters not set");
    std::vector<double> acc(2 * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double fx = 0.0, fy = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double dx = positions[2 * i] - positions[2 * j];
            const double dy = positions[2 * i + 1] - positions[2 * j + 1];
            const double k = spec.spring[i * n + j];
            const double r = std::sqrt(dx * dx + dy * dy);
            const double den = spec.clip + r;
            const double rep = spec.repulsion * spec.masses[i] * spec.masses[j] / (den * den * den);
            fx += -k * dx + rep * dx;
            fy += -k * dy + rep * dy;
        }
        acc[2 * i] = fx / spec.masses[i];
        acc[2 * i + 1] = fy / spec.masses[i];
    }
    return acc;
}

inline std::vector<double> kuramoto_deriv(const std::vector<double>& phases,
                                          const KuramotoSpec& spec) {
    const std::size_t n = spec.n_agents;
    if (phases.size() != n) throw std::invalid_argument("kuramoto_deriv: phase count mismatch");
    spec.validate();
    if (spec.omega.empty())
        throw std::invalid_argument("kuramoto_deriv: physical parameters not set");
    std::vector<double> rate(n);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = spec.omega[i];
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            acc += spec.coupling[i * n + j] * std::sin(phases[j] - phases[i]);
        }
        rate[i] = acc;
    }
    return rate;
}

// Prey i: (1/N) sum_{j != i} [ (x_i-x_j)/|x_i-x_j|^2 - a (x_i-x_j) ] + b (x_i-z)/|x_i-z|^2
// Predator: (c/N) sum_j (x_j - z)/|x_j - z|^2
// The prey self-pair is excluded (it is singular); the predator sum runs over
// all prey. Pair distances are clamped below at collision_eps.
inline std::pair<std::vector<double>, std::vector<double>> predator_swarm_deriv(
    const std::vector<double>& prey_positions, const std::vector<double>& predator_position,
    const PredatorSwarmSpec& spec) {
    const std::size_t n = spec.n_prey;
    if (prey_positions.size() != 2 * n || predator_position.size() != 2)
        throw std::invalid_argument("predator_swarm_deriv: bad position sizes");
    spec.validate();
    const double eps = spec.collision_eps;
    auto inv_sq = [eps](double dx, double dy) {
        double r = std::sqrt(dx * dx + dy * dy);
        if (r < eps) r = eps;
        return 1.0 / (r * r);
    };
    std::vector<double> dprey(2 * n, 0.0);
    std::vector<double> dpred(2, 0.0);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        double vx = 0.0, vy = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double dx = prey_positions[2 * i] - prey_positions[2 * j];
            const double dy = prey_positions[2 * i + 1] - prey_positions[2 * j + 1];
            const double w = inv_sq(dx, dy);
            vx += dx * w - spec.a * dx;
            vy += dy * w - spec.a * dy;
        }
        vx *= inv_n;
        vy *= inv_n;
        const double dxz = prey_positions[2 * i] - predator_position[0];
        const double dyz = prey_positions[2 * i + 1] - predator_position[1];
        const double wz = inv_sq(dxz, dyz);
        dprey[2 * i] = vx + spec.b * dxz * wz;
        dprey[2 * i + 1] = vy + spec.b * dyz * wz;
        dpred[0] += spec.c * inv_n * dxz * wz;
        dpred[1] += spec.c * inv_n * dyz * wz;
    }
    return {dprey, dpred};
}

// Time derivative of the flattened (N * state_dim) sample-state vector.
inline std::vector<double> system_deriv(const SystemSpec& spec, const std::vector<double>& state) {
    if (const auto* pm = std::get_if<PointMassSpec>(&spec)) {
        const std::size_t n = pm->n_agents;
        if (state.size() != 4 * n) throw std::invalid_argument("system_deriv: bad state size");
        std::vector<double> pos(2 * n), vel(2 * n);
        for (std::size_t i = 0; i < n; ++i) {
            pos[2 * i] = state[4 * i];
            pos[2 * i + 1] = state[4 * i + 1];
            vel[2 * i] = state[4 * i + 2];
            vel[2 * i + 1] = state[4 * i + 3];
        }
        std::vector<double> acc = point_mass_deriv(pos, vel, *pm);
        std::vector<double> out(4 * n);
        for (std::size_t i = 0; i < n; ++i) {
            out[4 * i] = vel[2 * i];
            out[4 * i + 1] = vel[2 * i + 1];
            out[4 * i + 2] = acc[2 * i];
            out[4 * i + 3] = acc[2 * i + 1];
        }
        return out;
    }
    if (const auto* ku = std::get_if<KuramotoSpec>(&spec)) return kuramoto_deriv(state, *ku);
    const auto& sw = std::get<PredatorSwarmSpec>(spec);
    const std::size_t n = sw.n_prey;
    if (state.size() != 2 * (n + 1)) throw std::invalid_argument("system_deriv: bad state size");
    std::vector<double> prey(state.begin(), state.begin() + 2 * n);
    std::vector<double> pred(state.end() - 2, state.end());
    auto [dprey, dpred] = predator_swarm_deriv(prey, pred, sw);
    dprey.insert(dprey.end(), dpred.begin(), dpred.end());
    return dprey;
}

// Classical fixed-step RK4 with `substeps` uniform sub-intervals per sampling
// period. Returns total_samples states, the first being the initial state.
inline std::vector<std::vector<double>> rk4_integrate(const SystemSpec& spec,
                                                      const std::vector<double>& initial,
                                                      std::size_t total_samples) {
    const std::size_t substeps = std::visit([](const auto& s) { return s.substeps; }, spec);
    if (substeps < 1) throw std::invalid_argument("rk4_integrate: substeps must be >= 1");
    if (total_samples < 1) throw std::invalid_argument("rk4_integrate: need at least one sample");
    const double h = spec_dt(spec) / static_cast<double>(substeps);
    std::vector<std::vector<double>> out;
    out.reserve(total_samples);
    out.push_back(initial);
    std::vector<double> x = initial;
    const std::size_t dim = x.size();
    std::vector<double> tmp(dim);
    for (std::size_t s = 1; s < total_samples; ++s) {
        for (std::size_t sub = 0; sub < substeps; ++sub) {
            const std::vector<double> k1 = system_deriv(spec, x);
            for (std::size_t i = 0; i < dim; ++i) tmp[i] = x[i] + 0.5 * h * k1[i];
            const std::vector<double> k2 = system_deriv(spec, tmp);
            for (std::size_t i = 0; i < dim; ++i) tmp[i] = x[i] + 0.5 * h * k2[i];
            const std::vector<double> k3 = system_deriv(spec, tmp);
            for (std::size_t i = 0; i < dim; ++i) tmp[i] = x[i] + h * k3[i];
            const std::vector<double> k4 = system_deriv(spec, tmp);
            for (std::size_t i = 0; i < dim; ++i)
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        for (double v : x)
            if (!std::isfinite(v))
                throw std::runtime_error("rk4_integrate: non-finite state at sample " +
                                         std::to_string(s));
        out.push_back(x);
    }
    return out;
}

// Sampled observations: M sequences of length L over N agents with state
// dimension d, stored [sequence][time][agent][dim].
struct Dataset {
    SystemId system = SystemId::point_mass;
    std::size_t n_agents = 0;
    std::size_t state_dim = 0;
    std::size_t num_sequences = 0;
    std::size_t seq_length = 0;
    double dt = 0.0;
    std::uint64_t seed = 0;
    std::vector<double> states;

    std::size_t sample_width() const { return n_agents * state_dim; }

    std::size_t offset(std::size_t seq, std::size_t t) const {
        return (seq * seq_length + t) * sample_width();
    }

    std::span<const double> state_at(std::size_t seq, std::size_t t) const {
        return {states.data() + offset(seq, t), sample_width()};
    }

    std::span<double> state_at(std::size_t seq, std::size_t t) {
        return {states.data() + offset(seq, t), sample_width()};
    }

    double at(std::size_t seq, std::size_t t, std::size_t agent, std::size_t dim) const {
        return states[offset(seq, t) + agent * state_dim + dim];
    }
};

namespace detail {

inline void draw_point_mass_params(PointMassSpec& spec, Rng& rng) {
    const std::size_t n = spec.n_agents;
    spec.masses.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        spec.masses[i] = rng.uniform(spec.mass_range.lo, spec.mass_range.hi);
    spec.spring.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double k = rng.uniform(spec.spring_range.lo, spec.spring_range.hi);
            spec.spring[i * n + j] = k;
            spec.spring[j * n + i] = k;
        }
}

inline void draw_kuramoto_params(KuramotoSpec& spec, Rng& rng) {
    const std::size_t n = spec.n_agents;
    spec.omega.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        spec.omega[i] = rng.uniform(spec.omega_range.lo, spec.omega_range.hi);
    spec.coupling.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double k = rng.uniform(spec.coupling_range.lo, spec.coupling_range.hi);
            spec.coupling[i * n + j] = k;
            spec.coupling[j * n + i] = k;
        }
}

inline std::vector<double> draw_initial_state(const SystemSpec& spec, Rng& rng) {
    if (const auto* pm = std::get_if<PointMassSpec>(&spec)) {
        std::vector<double> s(4 * pm->n_agents);
        for (std::size_t i = 0; i < pm->n_agents; ++i) {
            s[4 * i] = rng.uniform(pm->position_range.lo, pm->position_range.hi);
            s[4 * i + 1] = rng.uniform(pm->position_range.lo, pm->position_range.hi);
            s[4 * i + 2] = rng.uniform(pm->velocity_range.lo, pm->velocity_range.hi);
            s[4 * i + 3] = rng.uniform(pm->velocity_range.lo, pm->velocity_range.hi);
        }
        return s;
    }
    if (const auto* ku = std::get_if<KuramotoSpec>(&spec)) {
        std::vector<double> s(ku->n_agents);
        for (double& v : s) v = rng.uniform(0.0, 6.283185307179586476925286766559);
        return s;
    }
    const auto& sw = std::get<PredatorSwarmSpec>(spec);
    std::vector<double> s(2 * sw.n_agents());
    for (std::size_t i = 0; i < sw.n_prey; ++i) {
        s[2 * i] = rng.uniform(sw.prey_position_range.lo, sw.prey_position_range.hi);
        s[2 * i + 1] = rng.uniform(sw.prey_position_range.lo, sw.prey_position_range.hi);
    }
    s[2 * sw.n_prey] = rng.uniform(sw.predator_position_range.lo, sw.predator_position_range.hi);
    s[2 * sw.n_prey + 1] =
        rng.uniform(sw.predator_position_range.lo, sw.predator_position_range.hi);
    return s;
}

}  // namespace detail

// Draws physical parameters once per dataset (unless the spec already carries
// them), then integrates M sequences from per-sequence random initial states.
// Sequence s uses the sub-seed seed^s, so sequences are independent and the
// whole dataset is reproducible from (spec, M, L, seed).
inline Dataset generate_dataset(SystemSpec& spec, std::size_t num_sequences,
                                std::size_t seq_length, std::uint64_t seed) {
    if (num_sequences < 1 || seq_length < 1)
        throw std::invalid_argument("generate_dataset: M and L must be >= 1");
    std::visit([](const auto& s) { s.validate(); }, spec);
    std::visit(
        [&](auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, PointMassSpec>) {
                if (s.masses.empty()) {
                    Rng prng(parameter_seed(seed));
                    detail::draw_point_mass_params(s, prng);
                }
            } else if constexpr (std::is_same_v<T, KuramotoSpec>) {
                if (s.omega.empty()) {
                    Rng prng(parameter_seed(seed));
                    detail::draw_kuramoto_params(s, prng);
                }
            }
        },
        spec);
    std::visit([](const auto& s) { s.validate(); }, spec);

    Dataset ds;
    ds.system = system_id(spec);
    ds.n_agents = spec_agents(spec);
    ds.state_dim = spec_state_dim(spec);
    ds.num_sequences = num_sequences;
    ds.seq_length = seq_length;
    ds.dt = spec_dt(spec);
    ds.seed = seed;
    ds.states.resize(num_sequences * seq_length * ds.sample_width());
    for (std::size_t s = 0; s < num_sequences; ++s) {
        Rng rng(sequence_seed(seed, s));
        const std::vector<double> init = detail::draw_initial_state(spec, rng);
        const auto traj = rk4_integrate(spec, init, seq_length);
        for (std::size_t t = 0; t < seq_length; ++t) {
            auto dst = ds.state_at(s, t);
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = traj[t][i];
        }
    }
    return ds;
}

}  // namespace magnet
