#pragma once

#include <optional>
#include <string>
#include <vector>

#include "magnet/random.hpp"
#include "magnet/tape.hpp"
#include "magnet/tensor.hpp"

namespace magnet {

// Fully connected layer y = act(W x + b). Bias is optional so the layer can
// implement a pure linear transform (needed wherever oddness must hold).
struct DenseLayer {
    Tensor W;  // (out, in)
    Tensor b;  // (out) when has_bias
    bool has_bias = true;
    Activation act = Activation::identity;

    std::size_t in_dim() const { return W.shape[1]; }
    std::size_t out_dim() const { return W.shape[0]; }
};

// Dot-product layer. The incoming feature of width l*d is reshaped
// column-wise into l x d; output component k is e_k . w_k (+ b_k).
struct DotProductLayer {
    Tensor W;  // (l, d), column k is w_k
    Tensor b;  // (d) when has_bias
    bool has_bias = true;

    std::size_t l() const { return W.shape[0]; }
    std::size_t d() const { return W.shape[1]; }
};

// Weight init: W uniform in +-sqrt(1/fan_in), biases zero.
inline DenseLayer make_dense(std::size_t out, std::size_t in, Activation act, bool has_bias,
                             Rng& rng) {
    DenseLayer layer;
    layer.W = Tensor({out, in});
    const double bound = std::sqrt(1.0 / static_cast<double>(in));
    for (double& v : layer.W.data) v = rng.uniform(-bound, bound);
    layer.has_bias = has_bias;
    if (has_bias) layer.b = Tensor({out});
    layer.act = act;
    return layer;
}

inline DotProductLayer make_dot_product(std::size_t l, std::size_t d, bool has_bias, Rng& rng) {
    DotProductLayer layer;
    layer.W = Tensor({l, d});
    const double bound = std::sqrt(1.0 / static_cast<double>(l));
    for (double& v : layer.W.data) v = rng.uniform(-bound, bound);
    layer.has_bias = has_bias;
    if (has_bias) layer.b = Tensor({d});
    return layer;
}

inline Tape::Id tape_dense(Tape& t, Tape::Id x, const DenseLayer& layer) {
    Tape::Id w = t.leaf_param(layer.W);
    Tape::Id b = layer.has_bias ? t.leaf_param(layer.b) : Tape::none;
    return t.dense(x, w, b, layer.act);
}

inline Tape::Id tape_dot_product(Tape& t, Tape::Id f, const DotProductLayer& layer) {
    Tape::Id w = t.leaf_param(layer.W);
    Tape::Id b = layer.has_bias ? t.leaf_param(layer.b) : Tape::none;
    return t.dot_product(f, w, b);
}

// Stateless forward passes used by tests and inference. They run through the
// tape so there is exactly one implementation of the math.
inline Tensor dense_forward(const Tensor& x, const DenseLayer& layer) {
    Tape t;
    return t.value(tape_dense(t, t.leaf(x), layer));
}

inline Tensor dot_product_forward(const Tensor& feature, const DotProductLayer& layer) {
    Tape t;
    return t.value(tape_dot_product(t, t.leaf(feature), layer));
}

inline double smooth_l1(const Tensor& pred, const Tensor& target) {
    Tape t;
    return t.value(t.smooth_l1(t.leaf(pred), t.leaf(target))).data[0];
}

// One LSTM layer's parameters, gate order (i, f, g, o).
struct LstmWeights {
    Tensor W_ih;  // (4H, in)
    Tensor W_hh;  // (4H, H)
    Tensor b_ih;  // (4H)
    Tensor b_hh;  // (4H)

    std::size_t hidden() const { return W_hh.shape[1]; }
};

inline LstmWeights make_lstm_weights(std::size_t in, std::size_t hidden, Rng& rng) {
    LstmWeights w;
    const double bound = std::sqrt(1.0 / static_cast<double>(hidden));
    w.W_ih = Tensor({4 * hidden, in});
    w.W_hh = Tensor({4 * hidden, hidden});
    for (double& v : w.W_ih.data) v = rng.uniform(-bound, bound);
    for (double& v : w.W_hh.data) v = rng.uniform(-bound, bound);
    w.b_ih = Tensor({4 * hidden});
    w.b_hh = Tensor({4 * hidden});
    return w;
}

struct LstmState {
    Tape::Id h;
    Tape::Id c;
};

// Standard gated cell:
//   i = sig(.)  f = sig(.)  g = tanh(.)  o = sig(.)
//   c' = f*c + i*g,  h' = o*tanh(c')
inline LstmState tape_lstm_cell(Tape& t, Tape::Id x, LstmState state, const LstmWeights& w) {
    const std::size_t H = w.hidden();
    Tape::Id gates =
        t.add(t.dense(x, t.leaf_param(w.W_ih), t.leaf_param(w.b_ih), Activation::identity),
              t.dense(state.h, t.leaf_param(w.W_hh), t.leaf_param(w.b_hh), Activation::identity));
    Tape::Id gi = t.sigmoid(t.slice_cols(gates, 0, H));
    Tape::Id gf = t.sigmoid(t.slice_cols(gates, H, 2 * H));
    Tape::Id gg = t.tanh_op(t.slice_cols(gates, 2 * H, 3 * H));
    Tape::Id go = t.sigmoid(t.slice_cols(gates, 3 * H, 4 * H));
    Tape::Id c_next = t.add(t.mul(gf, state.c), t.mul(gi, gg));
    Tape::Id h_next = t.mul(go, t.tanh_op(c_next));
    return {h_next, c_next};
}

// Single-cell forward on plain tensors (x, h, c are rank 2: (B, dim)).
inline std::pair<Tensor, Tensor> lstm_cell_forward(const Tensor& x, const Tensor& hidden,
                                                   const Tensor& cell, const LstmWeights& w) {
    if (x.cols() != w.W_ih.shape[1] || hidden.cols() != w.hidden() || cell.cols() != w.hidden())
        throw std::invalid_argument("lstm_cell_forward: dimension mismatch");
    Tape t;
    LstmState s{t.leaf(hidden), t.leaf(cell)};
    LstmState out = tape_lstm_cell(t, t.leaf(x), s, w);
    return {t.value(out.h), t.value(out.c)};
}

}  // namespace magnet
