#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "magnet/tensor.hpp"

namespace magnet {

// A parameter tensor registered with the optimizer. The name is used in
// diagnostics and as the checkpoint key.
struct NamedParam {
    std::string name;
    Tensor* tensor = nullptr;
};

// eps sits well below the gradient scale of single-step losses (~1e-9 for
// state deltas of order dt); at the textbook 1e-8 it would dominate
// sqrt(vhat) here and throttle the effective step size.
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-12;
    std::int64_t step = 0;
    std::vector<std::vector<double>> m;  // first moments, one slot per parameter
    std::vector<std::vector<double>> v;  // second moments

    void reset(const std::vector<NamedParam>& params) {
        step = 0;
        m.clear();
        v.clear();
        for (const NamedParam& p : params) {
            m.emplace_back(p.tensor->numel(), 0.0);
            v.emplace_back(p.tensor->numel(), 0.0);
        }
    }
};

// One Adam update with bias correction:
//   m <- b1 m + (1-b1) g       mhat = m / (1 - b1^t)
//   v <- b2 v + (1-b2) g^2     vhat = v / (1 - b2^t)
//   p <- p - lr * mhat / (sqrt(vhat) + eps)
inline void adam_step(const std::vector<NamedParam>& params, const std::vector<Tensor>& grads,
                      AdamState& state) {
    if (params.size() != grads.size())
        throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
    if (state.m.size() != params.size()) state.reset(params);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].tensor->same_shape(grads[i]))
            throw std::invalid_argument("adam_step: shape mismatch for " + params[i].name);
        if (!grads[i].all_finite())
            throw std::runtime_error("adam_step: non-finite gradient for " + params[i].name);
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        std::vector<double>& p = params[i].tensor->data;
        const std::vector<double>& g = grads[i].data;
        std::vector<double>& m = state.m[i];
        std::vector<double>& v = state.v[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            p[k] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

}  // namespace magnet
