#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "magnet/adam.hpp"
#include "magnet/dynamics.hpp"
#include "magnet/nn.hpp"
#include "magnet/standardize.hpp"

namespace magnet {

// Layer widths of the core. The feature vector out of f (length f_widths[1])
// is reshaped to l x d for the interaction dot-product layers; g's first
// layer output is reshaped to (g1_width/d) x d for the per-agent dot-product
// layers.
struct ArchConfig {
    std::size_t input_dim = 4;
    std::size_t deriv_dim = 2;
    std::size_t h_width1 = 64;
    std::size_t h_width2 = 64;
    std::size_t f_width1 = 64;
    std::size_t f_width2 = 8;
    std::size_t g1_width = 4;

    std::size_t interaction_l() const { return f_width2 / deriv_dim; }
    std::size_t self_l() const { return g1_width / deriv_dim; }

    void validate() const {
        if (input_dim == 0 || deriv_dim == 0 || h_width1 == 0 || h_width2 == 0 || f_width1 == 0 ||
            f_width2 == 0 || g1_width == 0)
            throw std::invalid_argument("ArchConfig: all dimensions must be positive");
        if (f_width2 % deriv_dim != 0)
            throw std::invalid_argument("ArchConfig: f output width must be divisible by d");
        if (g1_width % deriv_dim != 0)
            throw std::invalid_argument("ArchConfig: g first-layer width must be divisible by d");
    }
};

// Per-system defaults; only the state-code dimensions change across systems.
inline ArchConfig arch_for_system(SystemId id) {
    ArchConfig a;
    switch (id) {
        case SystemId::point_mass:
            a.input_dim = 4;
            a.deriv_dim = 2;
            break;
        case SystemId::kuramoto:
            a.input_dim = 1;
            a.deriv_dim = 1;
            break;
        case SystemId::predator_swarm:
            a.input_dim = 2;
            a.deriv_dim = 2;
            break;
    }
    return a;
}

inline bool system_is_second_order(SystemId id) { return id == SystemId::point_mass; }

// Shared across agents: h (relu, relu), f (tanh, tanh, no bias so the
// interaction is odd with f(0) = 0), and g's first layer (relu).
struct CoreParams {
    DenseLayer h1, h2, f1, f2, g1;
};

// Agent-specific: one l x d interaction matrix per ordered pair (i, j) with
// i != j, and a per-agent dot-product output layer with bias.
struct WrapperParams {
    std::size_t n_agents = 0;
    std::vector<Tensor> interaction;   // N(N-1) matrices, shape (l, d)
    std::vector<DotProductLayer> g2;   // N layers

    std::size_t pair_count() const { return n_agents * (n_agents - 1); }

    // Index of ordered pair (i, j), i != j, in `interaction`.
    std::size_t pair_index(std::size_t i, std::size_t j) const {
        if (i == j || i >= n_agents || j >= n_agents)
            throw std::invalid_argument("WrapperParams: bad agent pair");
        return i * (n_agents - 1) + (j < i ? j : j - 1);
    }
};

struct MagnetModel {
    ArchConfig arch;
    CoreParams core;
    WrapperParams wrapper;
    Standardizer standardizer;
    bool second_order = false;
    double dt = 0.01;
    std::size_t n_agents = 0;
    double recorded_validation_loss = 0.0;

    std::vector<NamedParam> core_parameters() {
        return {{"core.h1.weight", &core.h1.W}, {"core.h1.bias", &core.h1.b},
                {"core.h2.weight", &core.h2.W}, {"core.h2.bias", &core.h2.b},
                {"core.f1.weight", &core.f1.W}, {"core.f2.weight", &core.f2.W},
                {"core.g1.weight", &core.g1.W}, {"core.g1.bias", &core.g1.b}};
    }

    std::vector<NamedParam> wrapper_parameters() {
        std::vector<NamedParam> out;
        for (std::size_t i = 0; i < n_agents; ++i)
            for (std::size_t j = 0; j < n_agents; ++j) {
                if (i == j) continue;
                out.push_back({"wrapper.I." + std::to_string(i) + "." + std::to_string(j),
                               &wrapper.interaction[wrapper.pair_index(i, j)]});
            }
        for (std::size_t i = 0; i < n_agents; ++i) {
            out.push_back({"wrapper.g2." + std::to_string(i) + ".weight", &wrapper.g2[i].W});
            out.push_back({"wrapper.g2." + std::to_string(i) + ".bias", &wrapper.g2[i].b});
        }
        return out;
    }

    std::vector<NamedParam> parameters() {
        std::vector<NamedParam> out = core_parameters();
        for (NamedParam& p : wrapper_parameters()) out.push_back(p);
        return out;
    }
};

// Deterministic per seed. Weights uniform in +-sqrt(1/fan_in), biases zero;
// draw order is core layers, then interaction matrices by ordered pair, then
// per-agent output layers.
inline MagnetModel build_model(const ArchConfig& arch, std::size_t n_agents, std::uint64_t seed,
                               bool second_order = false, double dt = 0.01) {
    arch.validate();
    if (n_agents < 1) throw std::invalid_argument("build_model: need at least one agent");
    if (second_order && arch.input_dim != 2 * arch.deriv_dim)
        throw std::invalid_argument("build_model: second-order mode requires input_dim == 2d");
    Rng rng(seed);
    MagnetModel m;
    m.arch = arch;
    m.n_agents = n_agents;
    m.second_order = second_order;
    m.dt = dt;
    m.core.h1 = make_dense(arch.h_width1, arch.input_dim, Activation::relu, true, rng);
    m.core.h2 = make_dense(arch.h_width2, arch.h_width1, Activation::relu, true, rng);
    m.core.f1 = make_dense(arch.f_width1, arch.h_width2, Activation::tanh, false, rng);
    m.core.f2 = make_dense(arch.f_width2, arch.f_width1, Activation::tanh, false, rng);
    m.core.g1 = make_dense(arch.g1_width, arch.input_dim, Activation::relu, true, rng);
    m.wrapper.n_agents = n_agents;
    const std::size_t l = arch.interaction_l(), d = arch.deriv_dim;
    const double ibound = std::sqrt(1.0 / static_cast<double>(l));
    m.wrapper.interaction.reserve(m.wrapper.pair_count());
    for (std::size_t i = 0; i < n_agents; ++i)
        for (std::size_t j = 0; j < n_agents; ++j) {
            if (i == j) continue;
            Tensor t({l, d});
            for (double& v : t.data) v = rng.uniform(-ibound, ibound);
            m.wrapper.interaction.push_back(std::move(t));
        }
    for (std::size_t i = 0; i < n_agents; ++i)
        m.wrapper.g2.push_back(make_dot_product(arch.self_l(), d, true, rng));
    return m;
}

// Counts by walking actual tensor storage.
inline std::pair<std::size_t, std::size_t> count_params(const MagnetModel& model) {
    std::size_t core = model.core.h1.W.numel() + model.core.h1.b.numel() +
                       model.core.h2.W.numel() + model.core.h2.b.numel() +
                       model.core.f1.W.numel() + model.core.f2.W.numel() +
                       model.core.g1.W.numel() + model.core.g1.b.numel();
    std::size_t wrapper = 0;
    for (const Tensor& t : model.wrapper.interaction) wrapper += t.numel();
    for (const DotProductLayer& g : model.wrapper.g2)
        wrapper += g.W.numel() + (g.has_bias ? g.b.numel() : 0);
    return {core, wrapper};
}

namespace model_detail {

struct CoreIds {
    Tape::Id h1w, h1b, h2w, h2b, f1w, f2w, g1w, g1b;
};

inline CoreIds leaf_core(Tape& t, const CoreParams& c) {
    return {t.leaf_param(c.h1.W), t.leaf_param(c.h1.b), t.leaf_param(c.h2.W),
            t.leaf_param(c.h2.b), t.leaf_param(c.f1.W), t.leaf_param(c.f2.W),
            t.leaf_param(c.g1.W), t.leaf_param(c.g1.b)};
}

}  // namespace model_detail

// Derivative estimates for a batch of standardized states laid out
// (B, N * input_dim). Returns per-agent derivative ids, each (B, d):
//   deriv_i = g2_i(g1(s_i)) + sum_{j != i} I_ij (.) f(h(s_i) - h(s_j))
// The pair features are computed once per ordered pair.
inline std::vector<Tape::Id> magnet_derivative_ids(Tape& t, const MagnetModel& model,
                                                   Tape::Id states) {
    const std::size_t n = model.n_agents;
    const ArchConfig& a = model.arch;
    const Tensor& sv = t.value(states);
    if (sv.rank() != 2 || sv.shape[1] != n * a.input_dim)
        throw std::invalid_argument("magnet: states must be (B, N*input_dim); wrapper is sized "
                                    "for N = " + std::to_string(n));
    const std::size_t batch = sv.shape[0];
    const auto core = model_detail::leaf_core(t, model.core);

    Tape::Id per_agent = t.reshape(states, {batch * n, a.input_dim});
    Tape::Id hcode = t.dense(t.dense(per_agent, core.h1w, core.h1b, Activation::relu), core.h2w,
                             core.h2b, Activation::relu);
    Tape::Id gcode = t.dense(per_agent, core.g1w, core.g1b, Activation::relu);

    std::vector<Tape::Id> h_of(n), g_of(n);
    for (std::size_t i = 0; i < n; ++i) {
        h_of[i] = t.slice_rows_strided(hcode, n, i);
        g_of[i] = t.slice_rows_strided(gcode, n, i);
    }

    std::vector<Tape::Id> deriv(n);
    for (std::size_t i = 0; i < n; ++i)
        deriv[i] = tape_dot_product(t, g_of[i], model.wrapper.g2[i]);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            Tape::Id diff = t.sub(h_of[i], h_of[j]);
            Tape::Id feat = t.dense(t.dense(diff, core.f1w, Tape::none, Activation::tanh),
                                    core.f2w, Tape::none, Activation::tanh);
            Tape::Id iw = t.leaf_param(model.wrapper.interaction[model.wrapper.pair_index(i, j)]);
            deriv[i] = t.add(deriv[i], t.dot_product(feat, iw, Tape::none));
        }
    return deriv;
}

// One discretized update in standardized coordinates, (B, N*input_dim) to the
// same shape. First-order: s' = s + dt * deriv. Second-order: the state is
// (p, v) per agent; v' = v + dt * accel, then the position update is the
// standardized image of the physical relation p' = p + dt * v', which reads
//   p'_std = p_std + (dt / sigma_p) (sigma_v * v'_std + mu_v)
// per channel. With an unfitted standardizer both maps reduce to
// p' = p + dt * v'.
inline Tape::Id magnet_step_ids(Tape& t, const MagnetModel& model, Tape::Id states) {
    const std::size_t n = model.n_agents;
    const std::size_t in = model.arch.input_dim;
    const std::size_t d = model.arch.deriv_dim;
    const std::vector<Tape::Id> deriv = magnet_derivative_ids(t, model, states);
    std::vector<double> vscale(d, model.dt), voffset(d, 0.0);
    if (model.second_order && model.standardizer.dims() == in) {
        const Standardizer& z = model.standardizer;
        for (std::size_t k = 0; k < d; ++k) {
            vscale[k] = model.dt * z.stddev[d + k] / z.stddev[k];
            voffset[k] = model.dt * z.mean[d + k] / z.stddev[k];
        }
    }
    std::vector<Tape::Id> blocks;
    blocks.reserve(model.second_order ? 2 * n : n);
    for (std::size_t i = 0; i < n; ++i) {
        if (model.second_order) {
            Tape::Id p = t.slice_cols(states, i * in, i * in + d);
            Tape::Id v = t.slice_cols(states, i * in + d, i * in + 2 * d);
            Tape::Id v_next = t.axpy(model.dt, deriv[i], v);
            Tape::Id p_next = t.add(p, t.colwise_affine(v_next, vscale, voffset));
            blocks.push_back(p_next);
            blocks.push_back(v_next);
        } else {
            Tape::Id s = t.slice_cols(states, i * in, (i + 1) * in);
            blocks.push_back(t.axpy(model.dt, deriv[i], s));
        }
    }
    return t.concat_cols(blocks);
}

// Convenience single-sample wrappers operating on flat standardized states.

inline std::vector<std::vector<double>> predict_derivative(const std::vector<double>& states_std,
                                                           const MagnetModel& model) {
    const std::size_t n = model.n_agents;
    if (states_std.size() != n * model.arch.input_dim)
        throw std::invalid_argument("predict_derivative: agent count mismatch with wrapper");
    Tape t;
    Tape::Id s = t.leaf(Tensor({1, states_std.size()}, states_std));
    const auto ids = magnet_derivative_ids(t, model, s);
    std::vector<std::vector<double>> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = t.value(ids[i]).data;
    return out;
}

inline std::vector<double> step(const std::vector<double>& states_std, const MagnetModel& model) {
    Tape t;
    Tape::Id s = t.leaf(Tensor({1, states_std.size()}, states_std));
    return t.value(magnet_step_ids(t, model, s)).data;
}

struct RolloutResult {
    std::vector<std::vector<double>> states;  // original (unstandardized) units
    bool truncated = false;
    std::string note;
};

// Iterates `step` from a single raw initial state; the first entry of the
// result is the initial state. A non-finite state truncates the rollout and
// records a diagnostic instead of throwing.
inline RolloutResult rollout(const std::vector<double>& initial_raw, const MagnetModel& model,
                             std::size_t horizon_samples) {
    if (horizon_samples < 1) throw std::invalid_argument("rollout: need at least one sample");
    RolloutResult out;
    out.states.reserve(horizon_samples);
    out.states.push_back(initial_raw);
    std::vector<double> s = initial_raw;
    apply_standardizer(std::span<double>(s), model.standardizer, TransformDirection::forward);
    for (std::size_t k = 1; k < horizon_samples; ++k) {
        s = step(s, model);
        bool finite = true;
        for (double v : s)
            if (!std::isfinite(v)) finite = false;
        if (!finite) {
            out.truncated = true;
            out.note = "non-finite state at rollout step " + std::to_string(k);
            break;
        }
        std::vector<double> raw = s;
        apply_standardizer(std::span<double>(raw), model.standardizer,
                           TransformDirection::inverse);
        out.states.push_back(std::move(raw));
    }
    return out;
}

// Wrapper weights for a (possibly larger) system, initialized with the mean
// of the pretrained wrapper across agents; the core and standardizer carry
// over unchanged and stay frozen during re-tuning.
inline MagnetModel init_wrapper_from_pretrained(const MagnetModel& pretrained,
                                                std::size_t n_new) {
    if (n_new < 2) throw std::invalid_argument("init_wrapper_from_pretrained: need N >= 2");
    if (pretrained.wrapper.interaction.empty() || pretrained.wrapper.g2.empty())
        throw std::invalid_argument("init_wrapper_from_pretrained: pretrained wrapper is empty");
    MagnetModel m;
    m.arch = pretrained.arch;
    m.core = pretrained.core;
    m.standardizer = pretrained.standardizer;
    m.second_order = pretrained.second_order;
    m.dt = pretrained.dt;
    m.n_agents = n_new;
    m.recorded_validation_loss = pretrained.recorded_validation_loss;

    Tensor i_mean(pretrained.wrapper.interaction[0].shape);
    for (const Tensor& t : pretrained.wrapper.interaction)
        for (std::size_t k = 0; k < i_mean.data.size(); ++k) i_mean.data[k] += t.data[k];
    for (double& v : i_mean.data) v /= static_cast<double>(pretrained.wrapper.interaction.size());

    DotProductLayer g_mean = pretrained.wrapper.g2[0];
    std::fill(g_mean.W.data.begin(), g_mean.W.data.end(), 0.0);
    std::fill(g_mean.b.data.begin(), g_mean.b.data.end(), 0.0);
    for (const DotProductLayer& g : pretrained.wrapper.g2) {
        for (std::size_t k = 0; k < g_mean.W.data.size(); ++k) g_mean.W.data[k] += g.W.data[k];
        for (std::size_t k = 0; k < g_mean.b.data.size(); ++k) g_mean.b.data[k] += g.b.data[k];
    }
    const double inv = 1.0 / static_cast<double>(pretrained.wrapper.g2.size());
    for (double& v : g_mean.W.data) v *= inv;
    for (double& v : g_mean.b.data) v *= inv;

    m.wrapper.n_agents = n_new;
    m.wrapper.interaction.assign(n_new * (n_new - 1), i_mean);
    m.wrapper.g2.assign(n_new, g_mean);
    return m;
}

}  // namespace magnet
