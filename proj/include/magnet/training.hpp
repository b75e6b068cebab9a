#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "magnet/adam.hpp"
#include "magnet/baselines.hpp"
#include "magnet/model.hpp"
#include "magnet/standardize.hpp"

namespace magnet {

struct TrainConfig {
    enum class Mode { full, wrapper_only };

    std::size_t epochs = 100;
    std::size_t batch_size = 32;
    double lr_init = 1e-3;
    double lr_decay = 0.95;
    double lr_floor = 1e-4;
    Mode mode = Mode::full;
    std::uint64_t seed = 0;
    double validation_fraction = 0.1;
    std::size_t min_stream_length = 50;  // re-tuning observation minimum

    void validate() const {
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch size must be >= 1");
        if (lr_decay <= 0.0 || lr_decay > 1.0)
            throw std::invalid_argument("TrainConfig: decay must be in (0, 1]");
        if (lr_floor > lr_init)
            throw std::invalid_argument("TrainConfig: floor must not exceed the initial rate");
        if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
            throw std::invalid_argument("TrainConfig: validation fraction must be in (0, 1)");
    }
};

inline double lr_at_epoch(const TrainConfig& c, std::size_t epoch) {
    return std::max(c.lr_init * std::pow(c.lr_decay, static_cast<double>(epoch)), c.lr_floor);
}

struct LossTrace {
    double validation_initial = 0.0;
    std::vector<double> train;       // mean training loss per epoch
    std::vector<double> validation;  // validation loss after each epoch
};

struct TrainResult {
    LossTrace trace;
    double final_validation = 0.0;
};

namespace train_detail {

inline std::size_t warmup_window(const MagnetModel&) { return 1; }
inline std::size_t warmup_window(const MlpBaseline&) { return 1; }
inline std::size_t warmup_window(const LstmBaseline& m) { return m.window; }

inline Tape::Id tape_predict_next(Tape& t, const MagnetModel& m,
                                  const std::vector<Tape::Id>& window) {
    return magnet_step_ids(t, m, window.back());
}
inline Tape::Id tape_predict_next(Tape& t, const MlpBaseline& m,
                                  const std::vector<Tape::Id>& window) {
    return mlp_forward_ids(t, m, window.back());
}
inline Tape::Id tape_predict_next(Tape& t, const LstmBaseline& m,
                                  const std::vector<Tape::Id>& window) {
    return lstm_forward_ids(t, m, window);
}

inline std::vector<NamedParam> trainable_parameters(MagnetModel& m, TrainConfig::Mode mode) {
    return mode == TrainConfig::Mode::wrapper_only ? m.wrapper_parameters() : m.parameters();
}
inline std::vector<NamedParam> trainable_parameters(MlpBaseline& m, TrainConfig::Mode mode) {
    if (mode == TrainConfig::Mode::wrapper_only)
        throw std::invalid_argument("wrapper-only training applies to MagNet models only");
    return m.parameters();
}
inline std::vector<NamedParam> trainable_parameters(LstmBaseline& m, TrainConfig::Mode mode) {
    if (mode == TrainConfig::Mode::wrapper_only)
        throw std::invalid_argument("wrapper-only training applies to MagNet models only");
    return m.parameters();
}

// A sample is the target time tt of one sequence; the feature window covers
// [tt - w, tt - 1].
struct Sample {
    std::uint32_t seq;
    std::uint32_t target_t;
};

inline std::vector<Sample> collect_samples(const Dataset& ds,
                                           const std::vector<std::size_t>& seqs, std::size_t w,
                                           std::size_t t_begin, std::size_t t_end) {
    std::vector<Sample> out;
    for (std::size_t s : seqs)
        for (std::size_t tt = std::max(w, t_begin); tt < t_end; ++tt)
            out.push_back({static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(tt)});
    (void)ds;
    return out;
}

inline Tensor gather(const Dataset& ds, const std::vector<Sample>& samples, std::size_t first,
                     std::size_t count, long offset_from_target) {
    const std::size_t width = ds.sample_width();
    Tensor out({count, width});
    for (std::size_t b = 0; b < count; ++b) {
        const Sample& s = samples[first + b];
        const std::size_t t =
            static_cast<std::size_t>(static_cast<long>(s.target_t) + offset_from_target);
        auto src = ds.state_at(s.seq, t);
        for (std::size_t k = 0; k < width; ++k) out.data[b * width + k] = src[k];
    }
    return out;
}

// Loss of one batch. When `grads` is non-null the tape runs backward and the
// per-parameter gradients (summed over shared uses) are written there.
template <typename Model>
double batch_loss(Model& model, const Dataset& std_ds, const std::vector<Sample>& samples,
                   std::size_t first, std::size_t count, std::size_t w,
                   const std::vector<NamedParam>* trainable, std::vector<Tensor>* grads) {
    Tape tape;
    std::vector<Tape::Id> window(w);
    for (std::size_t k = 0; k < w; ++k)
        window[k] = tape.leaf(
            gather(std_ds, samples, first, count, static_cast<long>(k) - static_cast<long>(w)));
    Tape::Id target = tape.leaf(gather(std_ds, samples, first, count, 0));
    Tape::Id pred = tape_predict_next(tape, model, window);
    Tape::Id loss = tape.smooth_l1(pred, target);
    if (grads) {
        tape.backward(loss);
        grads->clear();
        grads->reserve(trainable->size());
        for (const NamedParam& p : *trainable) grads->push_back(tape.param_grad(*p.tensor));
    }
    return tape.value(loss).data[0];
}

// Mean loss over samples, evaluated in deterministic batch order.
template <typename Model>
double dataset_loss(Model& model, const Dataset& std_ds, const std::vector<Sample>& samples,
                    std::size_t batch_size, std::size_t w) {
    if (samples.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t first = 0; first < samples.size(); first += batch_size) {
        const std::size_t count = std::min(batch_size, samples.size() - first);
        acc += batch_loss(model, std_ds, samples, first, count, w, nullptr, nullptr) *
               static_cast<double>(count);
    }
    return acc / static_cast<double>(samples.size());
}

}  // namespace train_detail

// Single-step training shared by MagNet and the learned baselines: SmoothL1
// on predicted vs observed next state in standardized coordinates, Adam, and
// the per-epoch schedule lr_k = max(lr_init * decay^k, floor). Mini-batches
// are reshuffled each epoch from all (window, next-state) pairs across the
// training sequences; every run is deterministic per config seed.
//
// Validation holds out the trailing sequences (or the trailing timesteps when
// the dataset holds a single sequence). Full mode fits the standardizer on
// the training split; wrapper-only mode keeps the model's standardizer, never
// registers core tensors with the optimizer, and restores the
// best-validation wrapper at the end.
template <typename Model>
TrainResult train_single_step(Model& model, const Dataset& dataset, const TrainConfig& config) {
    config.validate();
    if (dataset.num_sequences == 0 || dataset.seq_length < 2)
        throw std::invalid_argument("train_single_step: dataset has no state pairs");
    if (model.n_agents != dataset.n_agents)
        throw std::invalid_argument("train_single_step: model built for " +
                                    std::to_string(model.n_agents) + " agents, dataset has " +
                                    std::to_string(dataset.n_agents));

    const std::size_t w = train_detail::warmup_window(model);
    if (dataset.seq_length <= w)
        throw std::invalid_argument("train_single_step: sequences shorter than the model window");

    std::vector<std::size_t> train_seqs, val_seqs;
    std::size_t train_t_end = dataset.seq_length, val_t_begin = 0;
    const bool time_split = dataset.num_sequences == 1;
    if (time_split) {
        train_seqs = val_seqs = {0};
        const std::size_t val_len = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::floor(static_cast<double>(dataset.seq_length) *
                                                   config.validation_fraction)));
        train_t_end = dataset.seq_length - val_len;
        val_t_begin = train_t_end;
        if (train_t_end <= w)
            throw std::invalid_argument("train_single_step: sequence too short to split");
    } else {
        std::size_t n_val = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::floor(static_cast<double>(dataset.num_sequences) *
                                                   config.validation_fraction)));
        if (n_val >= dataset.num_sequences) n_val = dataset.num_sequences - 1;
        for (std::size_t s = 0; s < dataset.num_sequences - n_val; ++s) train_seqs.push_back(s);
        for (std::size_t s = dataset.num_sequences - n_val; s < dataset.num_sequences; ++s)
            val_seqs.push_back(s);
    }

    if (config.mode == TrainConfig::Mode::full)
        model.standardizer = fit_standardizer(dataset, train_seqs);
    const Dataset std_ds = standardize_dataset(dataset, model.standardizer);

    std::vector<train_detail::Sample> train_samples =
        train_detail::collect_samples(std_ds, train_seqs, w, 0, train_t_end);
    const std::vector<train_detail::Sample> val_samples = train_detail::collect_samples(
        std_ds, val_seqs, w, time_split ? val_t_begin : 0, dataset.seq_length);
    if (train_samples.empty())
        throw std::invalid_argument("train_single_step: no training pairs");

    std::vector<NamedParam> trainable = train_detail::trainable_parameters(model, config.mode);
    AdamState adam;
    adam.reset(trainable);

    TrainResult result;
    result.trace.validation_initial =
        train_detail::dataset_loss(model, std_ds, val_samples, config.batch_size, w);
    double best_val = result.trace.validation_initial;
    const bool keep_best = config.mode == TrainConfig::Mode::wrapper_only;
    std::vector<Tensor> best_snapshot;
    if (keep_best)
        for (const NamedParam& p : trainable) best_snapshot.push_back(*p.tensor);

    Rng shuffle_rng(splitmix64(config.seed ^ 0x73687566666C65ULL));
    std::vector<Tensor> grads;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        adam.lr = lr_at_epoch(config, epoch);
        shuffle_rng.shuffle(train_samples);
        double epoch_acc = 0.0;
        for (std::size_t first = 0; first < train_samples.size(); first += config.batch_size) {
            const std::size_t count = std::min(config.batch_size, train_samples.size() - first);
            const double loss = train_detail::batch_loss(model, std_ds, train_samples, first,
                                                         count, w, &trainable, &grads);
            if (!std::isfinite(loss))
                throw std::runtime_error("train_single_step: non-finite loss at epoch " +
                                         std::to_string(epoch) + ", batch " +
                                         std::to_string(first / config.batch_size));
            epoch_acc += loss * static_cast<double>(count);
            adam_step(trainable, grads, adam);
        }
        result.trace.train.push_back(epoch_acc / static_cast<double>(train_samples.size()));
        const double val =
            train_detail::dataset_loss(model, std_ds, val_samples, config.batch_size, w);
        result.trace.validation.push_back(val);
        if (keep_best) {
            if (val < best_val) {
                best_val = val;
                for (std::size_t i = 0; i < trainable.size(); ++i)
                    best_snapshot[i] = *trainable[i].tensor;
            }
        } else {
            best_val = val;
        }
    }

    if (keep_best && config.epochs > 0)
        for (std::size_t i = 0; i < trainable.size(); ++i) *trainable[i].tensor = best_snapshot[i];

    result.final_validation = best_val;
    model.recorded_validation_loss = result.final_validation;
    return result;
}

// Frozen-core online re-tuning on a single observation sequence. The stream
// must hold one sequence of at least config.min_stream_length samples; only
// wrapper tensors are updated and the model's standardizer is kept.
inline TrainResult retune_wrapper(MagnetModel& model, const Dataset& stream,
                                  TrainConfig config) {
    if (config.mode != TrainConfig::Mode::wrapper_only)
        throw std::invalid_argument("retune_wrapper: config mode must be wrapper-only");
    if (stream.num_sequences != 1)
        throw std::invalid_argument("retune_wrapper: expected a single observation sequence");
    if (stream.seq_length < config.min_stream_length)
        throw std::invalid_argument("retune_wrapper: stream of " +
                                    std::to_string(stream.seq_length) +
                                    " observations is shorter than the configured minimum " +
                                    std::to_string(config.min_stream_length));
    if (model.standardizer.dims() == 0)
        throw std::invalid_argument("retune_wrapper: model has no fitted standardizer");
    return train_single_step(model, stream, config);
}

struct MonitorConfig {
    double threshold = 0.0;          // fires when the rolling error exceeds this
    std::size_t window = 50;         // rolling mean length
};

// Default trigger: 10x the checkpoint's recorded validation loss.
inline MonitorConfig default_monitor_config(const MagnetModel& model) {
    return MonitorConfig{10.0 * model.recorded_validation_loss, 50};
}

struct RetuneEvent {
    std::size_t trigger_timestep = 0;    // prediction step at which the mean crossed
    double rolling_error = 0.0;          // rolling mean at the trigger
    std::size_t observations_consumed = 0;
    double post_retune_validation_loss = 0.0;  // filled by the caller after re-tuning
};

// First crossing of the rolling mean over an error series; at most one event.
inline std::optional<std::size_t> detect_trigger(const std::vector<double>& errors,
                                                 double threshold, std::size_t window) {
    if (threshold <= 0.0) throw std::invalid_argument("detect_trigger: threshold must be > 0");
    if (window < 1) throw std::invalid_argument("detect_trigger: window must be >= 1");
    double acc = 0.0;
    for (std::size_t t = 0; t < errors.size(); ++t) {
        acc += errors[t];
        if (t >= window) acc -= errors[t - window];
        const std::size_t n = std::min(t + 1, window);
        if (acc / static_cast<double>(n) > threshold) return t;
    }
    return std::nullopt;
}

// Watches single-step standardized MSE of the model along an observation
// stream; returns the (single) trigger event, if any.
inline std::optional<RetuneEvent> monitor_and_trigger(const Dataset& stream,
                                                      const MagnetModel& model,
                                                      const MonitorConfig& config) {
    if (stream.num_sequences != 1)
        throw std::invalid_argument("monitor_and_trigger: expected a single sequence");
    const Dataset std_ds = standardize_dataset(stream, model.standardizer);
    const std::size_t width = std_ds.sample_width();
    std::vector<double> errors;
    errors.reserve(std_ds.seq_length - 1);
    for (std::size_t t = 0; t + 1 < std_ds.seq_length; ++t) {
        auto cur = std_ds.state_at(0, t);
        auto nxt = std_ds.state_at(0, t + 1);
        const std::vector<double> pred = step({cur.begin(), cur.end()}, model);
        double mse = 0.0;
        for (std::size_t k = 0; k < width; ++k) {
            const double e = pred[k] - nxt[k];
            mse += e * e;
        }
        errors.push_back(mse / static_cast<double>(width));
    }
    const auto hit = detect_trigger(errors, config.threshold, config.window);
    if (!hit) return std::nullopt;
    RetuneEvent ev;
    ev.trigger_timestep = *hit;
    const std::size_t lo = *hit + 1 >= config.window ? *hit + 1 - config.window : 0;
    double acc = 0.0;
    for (std::size_t k = lo; k <= *hit; ++k) acc += errors[k];
    ev.rolling_error = acc / static_cast<double>(*hit - lo + 1);
    ev.observations_consumed = *hit + 2;  // states 0..t+1 were read
    return ev;
}

}  // namespace magnet
