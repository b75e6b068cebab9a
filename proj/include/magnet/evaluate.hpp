#pragma once

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "magnet/baselines.hpp"
#include "magnet/model.hpp"
#include "magnet/tvdiff.hpp"

namespace magnet {

using Predictor = std::variant<LinearMotionBaseline, MagnetModel, MlpBaseline, LstmBaseline>;

inline std::size_t predictor_agents(const Predictor& p) {
    return std::visit([](const auto& m) { return m.n_agents; }, p);
}

inline std::size_t predictor_state_dim(const Predictor& p) {
    return std::visit(
        [](const auto& m) -> std::size_t {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, MagnetModel>)
                return m.arch.input_dim;
            else
                return m.state_dim;
        },
        p);
}

// Observed timesteps a predictor needs before its first own prediction.
inline std::size_t predictor_warmup(const Predictor& p) {
    return std::visit(
        [](const auto& m) -> std::size_t {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, LinearMotionBaseline>)
                return 2;
            else if constexpr (std::is_same_v<T, LstmBaseline>)
                return m.window;
            else
                return 1;
        },
        p);
}

// Channels entering the error metric: positions for the second-order
// point-mass state and for the swarm, the phase for Kuramoto.
inline std::vector<std::size_t> metric_channels(SystemId system, std::size_t state_dim) {
    switch (system) {
        case SystemId::point_mass: return {0, 1};
        case SystemId::kuramoto: return {0};
        case SystemId::predator_swarm: {
            std::vector<std::size_t> all(state_dim);
            for (std::size_t k = 0; k < state_dim; ++k) all[k] = k;
            return all;
        }
    }
    return {};
}

// Per-timestep rollout MSE (timesteps 1..horizon) with 95% confidence
// half-width across test sequences, in original physical units.
struct EvalReport {
    std::size_t horizon = 0;
    std::size_t n_sequences = 0;
    std::vector<std::size_t> channels;
    std::vector<double> mse_mean;  // index t-1 holds timestep t
    std::vector<double> ci_half;

    double mse_at(std::size_t timestep) const {
        if (timestep < 1 || timestep > horizon)
            throw std::invalid_argument("EvalReport: timestep out of range");
        return mse_mean[timestep - 1];
    }
};

namespace eval_detail {

inline std::size_t thread_budget() {
    if (const char* env = std::getenv("MAGNET_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<std::size_t>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

// Model predictions for timesteps 0..horizon of one sequence; the first
// `warmup` entries are the observed states themselves.
inline std::vector<std::vector<double>> predict_sequence(const Predictor& predictor,
                                                         const Dataset& ds, std::size_t seq,
                                                         std::size_t horizon) {
    const std::size_t width = ds.sample_width();
    const std::size_t warmup = predictor_warmup(predictor);
    std::vector<std::vector<double>> pred;
    pred.reserve(horizon + 1);
    for (std::size_t t = 0; t < warmup; ++t) {
        auto s = ds.state_at(seq, t);
        pred.emplace_back(s.begin(), s.end());
    }

    if (const auto* lin = std::get_if<LinearMotionBaseline>(&predictor)) {
        (void)lin;
        while (pred.size() <= horizon) {
            const auto& prev = pred[pred.size() - 2];
            const auto& curr = pred[pred.size() - 1];
            pred.push_back(linear_motion_predict(prev, curr));
        }
        return pred;
    }
    if (const auto* magnet_model = std::get_if<MagnetModel>(&predictor)) {
        const RolloutResult roll = rollout(pred[0], *magnet_model, horizon + 1);
        std::vector<std::vector<double>> out = roll.states;
        // a truncated rollout pads with its last state so the report stays rectangular
        while (out.size() <= horizon) out.push_back(out.back());
        return out;
    }
    if (const auto* mlp = std::get_if<MlpBaseline>(&predictor)) {
        std::vector<double> s = pred[0];
        apply_standardizer(std::span<double>(s), mlp->standardizer, TransformDirection::forward);
        while (pred.size() <= horizon) {
            Tape t;
            s = t.value(mlp_forward_ids(t, *mlp, t.leaf(Tensor({1, width}, s)))).data;
            std::vector<double> raw = s;
            apply_standardizer(std::span<double>(raw), mlp->standardizer,
                               TransformDirection::inverse);
            pred.push_back(std::move(raw));
        }
        return pred;
    }
    const auto& lstm = std::get<LstmBaseline>(predictor);
    std::vector<std::vector<double>> window;
    for (std::size_t t = 0; t < lstm.window; ++t) {
        std::vector<double> s = pred[t];
        apply_standardizer(std::span<double>(s), lstm.standardizer, TransformDirection::forward);
        window.push_back(std::move(s));
    }
    while (pred.size() <= horizon) {
        std::vector<double> s = lstm_predict(lstm, window);
        window.erase(window.begin());
        window.push_back(s);
        apply_standardizer(std::span<double>(s), lstm.standardizer, TransformDirection::inverse);
        pred.push_back(std::move(s));
    }
    return pred;
}

inline void mse_row(const std::vector<std::vector<double>>& pred, const Dataset& ds,
                    std::size_t seq, std::size_t truth_offset, std::size_t horizon,
                    std::size_t state_dim, const std::vector<std::size_t>& channels,
                    std::vector<double>& out) {
    const std::size_t n_agents = ds.n_agents;
    out.assign(horizon, 0.0);
    for (std::size_t t = 1; t <= horizon; ++t) {
        auto truth = ds.state_at(seq, truth_offset + t);
        double acc = 0.0;
        for (std::size_t a = 0; a < n_agents; ++a)
            for (std::size_t c : channels) {
                const double e = pred[t][a * state_dim + c] - truth[a * state_dim + c];
                acc += e * e;
            }
        out[t - 1] = acc / static_cast<double>(n_agents * channels.size());
    }
}

inline EvalReport reduce_rows(const std::vector<std::vector<double>>& rows, std::size_t horizon,
                              const std::vector<std::size_t>& channels) {
    EvalReport report;
    report.horizon = horizon;
    report.n_sequences = rows.size();
    report.channels = channels;
    report.mse_mean.assign(horizon, 0.0);
    report.ci_half.assign(horizon, 0.0);
    const double n = static_cast<double>(rows.size());
    for (std::size_t t = 0; t < horizon; ++t) {
        double mean = 0.0;
        for (const auto& r : rows) mean += r[t];
        mean /= n;
        double var = 0.0;
        if (rows.size() > 1) {
            for (const auto& r : rows) var += (r[t] - mean) * (r[t] - mean);
            var /= (n - 1.0);
        }
        report.mse_mean[t] = mean;
        report.ci_half[t] = 1.96 * std::sqrt(var / n);
    }
    return report;
}

template <typename PerSequence>
void parallel_over_sequences(std::size_t count, PerSequence&& body) {
    const std::size_t threads = std::min(thread_budget(), count);
    if (threads <= 1) {
        for (std::size_t s = 0; s < count; ++s) body(s);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t k = 0; k < threads; ++k)
        pool.emplace_back([&]() {
            for (;;) {
                const std::size_t s = next.fetch_add(1);
                if (s >= count) return;
                body(s);
            }
        });
    for (auto& th : pool) th.join();
}

}  // namespace eval_detail

// Initial-value rollouts over every sequence of the test set. Each predictor
// receives the observed prefix it needs (1 state; 2 for linear motion; 4 for
// the LSTM) and then runs on its own predictions. Results are reduced across
// sequences in a fixed order, so the report does not depend on thread
// scheduling.
inline EvalReport evaluate_rollout(const Predictor& predictor, const Dataset& test,
                                   std::size_t horizon) {
    if (test.num_sequences == 0) throw std::invalid_argument("evaluate_rollout: empty test set");
    if (horizon < 1) throw std::invalid_argument("evaluate_rollout: horizon must be >= 1");
    if (horizon + 1 > test.seq_length)
        throw std::invalid_argument("evaluate_rollout: horizon " + std::to_string(horizon) +
                                    " exceeds test sequence length " +
                                    std::to_string(test.seq_length) + " - 1");
    if (predictor_agents(predictor) != test.n_agents ||
        predictor_state_dim(predictor) != test.state_dim)
        throw std::invalid_argument("evaluate_rollout: predictor/test dimension mismatch");
    const std::vector<std::size_t> channels = metric_channels(test.system, test.state_dim);
    std::vector<std::vector<double>> rows(test.num_sequences);
    eval_detail::parallel_over_sequences(test.num_sequences, [&](std::size_t s) {
        const auto pred = eval_detail::predict_sequence(predictor, test, s, horizon);
        eval_detail::mse_row(pred, test, s, 0, horizon, test.state_dim, channels, rows[s]);
    });
    return eval_detail::reduce_rows(rows, horizon, channels);
}

// Noisy evaluation protocol for the second-order model: per sequence, noise
// is added to the observed positions, the 16-observation prefix is
// TV-differentiated to recover velocities, and the rollout starts from the
// state at the last prefix sample. Timestep t of the report compares the
// prediction t steps after the prefix end against the clean ground truth.
inline EvalReport evaluate_rollout_noisy(const MagnetModel& model, const Dataset& clean_test,
                                         double sigma_scale, std::uint64_t noise_seed,
                                         std::size_t horizon, const TVConfig& tv,
                                         std::size_t prefix = kEvalPrefixLength) {
    if (!model.second_order)
        throw std::invalid_argument("evaluate_rollout_noisy: needs a second-order model");
    if (prefix != kEvalPrefixLength)
        throw std::invalid_argument("evaluate_rollout_noisy: the denoising prefix is " +
                                    std::to_string(kEvalPrefixLength) + " observations");
    if (clean_test.num_sequences == 0)
        throw std::invalid_argument("evaluate_rollout_noisy: empty test set");
    if (prefix + horizon > clean_test.seq_length)
        throw std::invalid_argument("evaluate_rollout_noisy: prefix + horizon exceeds sequences");
    if (model.n_agents != clean_test.n_agents || model.arch.input_dim != clean_test.state_dim)
        throw std::invalid_argument("evaluate_rollout_noisy: model/test dimension mismatch");

    const Dataset noisy = add_gaussian_noise(clean_test, sigma_scale, noise_seed);
    const std::size_t pos_dim = clean_test.state_dim / 2;
    const std::vector<std::size_t> channels =
        metric_channels(clean_test.system, clean_test.state_dim);
    std::vector<std::vector<double>> rows(clean_test.num_sequences);
    eval_detail::parallel_over_sequences(clean_test.num_sequences, [&](std::size_t s) {
        PositionSeries series;
        series.n_agents = clean_test.n_agents;
        series.pos_dim = pos_dim;
        series.length = prefix;
        series.values.resize(prefix * series.n_agents * pos_dim);
        for (std::size_t t = 0; t < prefix; ++t) {
            auto st = noisy.state_at(s, t);
            for (std::size_t a = 0; a < series.n_agents; ++a)
                for (std::size_t k = 0; k < pos_dim; ++k)
                    series.values[(t * series.n_agents + a) * pos_dim + k] =
                        st[a * clean_test.state_dim + k];
        }
        const PreparedStates prep =
            prepare_noisy_states(series, clean_test.dt, tv, PrepareMode::evaluation);
        const RolloutResult roll = rollout(prep.last_state(), model, horizon + 1);
        std::vector<std::vector<double>> pred = roll.states;
        while (pred.size() <= horizon) pred.push_back(pred.back());
        eval_detail::mse_row(pred, clean_test, s, prefix - 1, horizon, clean_test.state_dim,
                             channels, rows[s]);
    });
    return eval_detail::reduce_rows(rows, horizon, channels);
}

}  // namespace magnet
