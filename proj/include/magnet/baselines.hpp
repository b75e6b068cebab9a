#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "magnet/adam.hpp"
#include "magnet/nn.hpp"
#include "magnet/standardize.hpp"

namespace magnet {

// Constant-velocity extrapolation from the previous two timesteps.
inline std::vector<double> linear_motion_predict(const std::vector<double>& s_prev,
                                                 const std::vector<double>& s_curr) {
    if (s_prev.size() != s_curr.size())
        throw std::invalid_argument("linear_motion_predict: shape mismatch");
    std::vector<double> next(s_curr.size());
    for (std::size_t i = 0; i < next.size(); ++i) next[i] = 2.0 * s_curr[i] - s_prev[i];
    return next;
}

struct LinearMotionBaseline {
    std::size_t n_agents = 0;
    std::size_t state_dim = 0;
    double dt = 0.0;
};

// Monolithic MLP over the concatenated state codes of all agents:
// (N*d_s) -> 64 -> 64 -> 64 -> (N*d_s) -> (N*d_s), relu everywhere except the
// final linear layer. Predicts the next standardized state directly.
struct MlpBaseline {
    std::size_t n_agents = 0;
    std::size_t state_dim = 0;
    std::vector<DenseLayer> layers;
    Standardizer standardizer;
    double dt = 0.0;
    double recorded_validation_loss = 0.0;

    std::vector<NamedParam> parameters() {
        std::vector<NamedParam> out;
        for (std::size_t k = 0; k < layers.size(); ++k) {
            out.push_back({"mlp.l" + std::to_string(k) + ".weight", &layers[k].W});
            if (layers[k].has_bias)
                out.push_back({"mlp.l" + std::to_string(k) + ".bias", &layers[k].b});
        }
        return out;
    }
};

inline MlpBaseline build_mlp_baseline(std::size_t n_agents, std::size_t state_dim,
                                      std::uint64_t seed) {
    if (n_agents < 1 || state_dim < 1)
        throw std::invalid_argument("build_mlp_baseline: N and d_s must be >= 1");
    Rng rng(seed);
    MlpBaseline m;
    m.n_agents = n_agents;
    m.state_dim = state_dim;
    const std::size_t io = n_agents * state_dim;
    m.layers.push_back(make_dense(64, io, Activation::relu, true, rng));
    m.layers.push_back(make_dense(64, 64, Activation::relu, true, rng));
    m.layers.push_back(make_dense(64, 64, Activation::relu, true, rng));
    m.layers.push_back(make_dense(io, 64, Activation::relu, true, rng));
    m.layers.push_back(make_dense(io, io, Activation::identity, true, rng));
    return m;
}

inline Tape::Id mlp_forward_ids(Tape& t, const MlpBaseline& model, Tape::Id states) {
    Tape::Id x = states;
    for (const DenseLayer& layer : model.layers) x = tape_dense(t, x, layer);
    return x;
}

// Two stacked LSTM layers of size 64 between an input and an output linear
// layer; consumes the standardized states of the previous four timesteps.
struct LstmBaseline {
    std::size_t n_agents = 0;
    std::size_t state_dim = 0;
    std::size_t hidden = 64;
    std::size_t window = 4;
    DenseLayer input;
    LstmWeights layer0, layer1;
    DenseLayer output;
    Standardizer standardizer;
    double dt = 0.0;
    double recorded_validation_loss = 0.0;

    std::vector<NamedParam> parameters() {
        std::vector<NamedParam> out = {{"lstm.input.weight", &input.W},
                                       {"lstm.input.bias", &input.b}};
        auto layer = [&out](const char* prefix, LstmWeights& w) {
            const std::string p = prefix;
            out.push_back({p + ".W_ih", &w.W_ih});
            out.push_back({p + ".W_hh", &w.W_hh});
            out.push_back({p + ".b_ih", &w.b_ih});
            out.push_back({p + ".b_hh", &w.b_hh});
        };
        layer("lstm.layer0", layer0);
        layer("lstm.layer1", layer1);
        out.push_back({"lstm.output.weight", &output.W});
        out.push_back({"lstm.output.bias", &output.b});
        return out;
    }
};

inline LstmBaseline build_lstm_baseline(std::size_t n_agents, std::size_t state_dim,
                                        std::uint64_t seed) {
    if (n_agents < 1 || state_dim < 1)
        throw std::invalid_argument("build_lstm_baseline: N and d_s must be >= 1");
    Rng rng(seed);
    LstmBaseline m;
    m.n_agents = n_agents;
    m.state_dim = state_dim;
    const std::size_t io = n_agents * state_dim;
    m.input = make_dense(m.hidden, io, Activation::identity, true, rng);
    m.layer0 = make_lstm_weights(m.hidden, m.hidden, rng);
    m.layer1 = make_lstm_weights(m.hidden, m.hidden, rng);
    m.output = make_dense(io, m.hidden, Activation::identity, true, rng);
    return m;
}

// window_states are (B, N*d_s) ids, oldest first; hidden/cell start at zero
// for every window (training truncates backpropagation to the window).
inline Tape::Id lstm_forward_ids(Tape& t, const LstmBaseline& model,
                                 const std::vector<Tape::Id>& window_states) {
    if (window_states.size() != model.window)
        throw std::invalid_argument("lstm_forward_ids: expected a window of " +
                                    std::to_string(model.window) + " states, got " +
                                    std::to_string(window_states.size()));
    const std::size_t batch = t.value(window_states[0]).rows();
    Tensor z({batch, model.hidden});
    LstmState s0{t.leaf(z), t.leaf(z)};
    LstmState s1{t.leaf(z), t.leaf(z)};
    for (Tape::Id x : window_states) {
        Tape::Id xin = tape_dense(t, x, model.input);
        s0 = tape_lstm_cell(t, xin, s0, model.layer0);
        s1 = tape_lstm_cell(t, s0.h, s1, model.layer1);
    }
    return tape_dense(t, s1.h, model.output);
}

// Single prediction from a window of standardized flat states, oldest first.
inline std::vector<double> lstm_predict(const LstmBaseline& model,
                                        const std::vector<std::vector<double>>& window) {
    if (window.size() != model.window)
        throw std::invalid_argument("lstm_predict: window must hold exactly " +
                                    std::to_string(model.window) + " states");
    Tape t;
    std::vector<Tape::Id> ids;
    for (const auto& s : window) ids.push_back(t.leaf(Tensor({1, s.size()}, s)));
    return t.value(lstm_forward_ids(t, model, ids)).data;
}

}  // namespace magnet
