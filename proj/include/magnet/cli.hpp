#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "magnet/io.hpp"
#include "magnet/training.hpp"

namespace magnet {

namespace cli_detail {

inline void reject_unknown_keys(const nlohmann::json& j,
                                std::initializer_list<const char*> allowed,
                                const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) ok = true;
        if (!ok)
            throw std::runtime_error("config: unknown key '" + it.key() + "' in " + where);
    }
}

struct NoiseSettings {
    double sigma_scale = 0.01;
    std::uint64_t seed = 1;
    TVConfig tv;
};

struct TrainSettings {
    TrainConfig train;
    std::optional<NoiseSettings> noise;
};

inline TVConfig parse_tv(const nlohmann::json& j) {
    reject_unknown_keys(j, {"alpha", "iterations", "epsilon", "cg_max_iters", "cg_tol"}, "tv");
    TVConfig tv;
    tv.alpha = j.value("alpha", tv.alpha);
    tv.iterations = j.value("iterations", tv.iterations);
    tv.eps = j.value("epsilon", tv.eps);
    tv.cg_max_iters = j.value("cg_max_iters", tv.cg_max_iters);
    tv.cg_tol = j.value("cg_tol", tv.cg_tol);
    tv.validate();
    return tv;
}

inline TrainSettings parse_train_config(const nlohmann::json& j) {
    reject_unknown_keys(j,
                        {"epochs", "batch_size", "lr_init", "lr_decay", "lr_floor", "mode",
                         "seed", "validation_fraction", "min_stream_length", "noise"},
                        "top level");
    TrainSettings s;
    s.train.epochs = j.value("epochs", s.train.epochs);
    s.train.batch_size = j.value("batch_size", s.train.batch_size);
    s.train.lr_init = j.value("lr_init", s.train.lr_init);
    s.train.lr_decay = j.value("lr_decay", s.train.lr_decay);
    s.train.lr_floor = j.value("lr_floor", s.train.lr_floor);
    if (j.contains("mode")) {
        const std::string mode = j["mode"].get<std::string>();
        if (mode == "full")
            s.train.mode = TrainConfig::Mode::full;
        else if (mode == "wrapper-only")
            s.train.mode = TrainConfig::Mode::wrapper_only;
        else
            throw std::runtime_error("config: mode must be 'full' or 'wrapper-only', got '" +
                                     mode + "'");
    }
    s.train.seed = j.value("seed", s.train.seed);
    s.train.validation_fraction = j.value("validation_fraction", s.train.validation_fraction);
    s.train.min_stream_length = j.value("min_stream_length", s.train.min_stream_length);
    if (j.contains("noise")) {
        const nlohmann::json& nj = j["noise"];
        reject_unknown_keys(nj, {"sigma_scale", "seed", "tv"}, "noise");
        NoiseSettings n;
        n.sigma_scale = nj.value("sigma_scale", n.sigma_scale);
        n.seed = nj.value("seed", n.seed);
        if (nj.contains("tv")) n.tv = parse_tv(nj["tv"]);
        s.noise = n;
    }
    s.train.validate();
    return s;
}

inline TrainSettings load_train_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config: " + path);
    return parse_train_config(nlohmann::json::parse(f));
}

inline SystemSpec make_spec(const std::string& system, std::size_t n, double dt,
                            std::size_t substeps) {
    if (system == "pm") {
        PointMassSpec s;
        s.n_agents = n;
        s.dt = dt;
        s.substeps = substeps;
        return s;
    }
    if (system == "kuramoto") {
        KuramotoSpec s;
        s.n_agents = n;
        s.dt = dt;
        s.substeps = substeps;
        return s;
    }
    if (system == "swarm") {
        PredatorSwarmSpec s;
        s.n_prey = n;
        s.dt = dt;
        s.substeps = substeps;
        return s;
    }
    throw std::runtime_error("unknown system '" + system + "' (expected pm|kuramoto|swarm)");
}

inline MagnetModel require_magnet(Predictor&& p, const std::string& what) {
    if (auto* m = std::get_if<MagnetModel>(&p)) return std::move(*m);
    throw std::runtime_error(what + " needs a magnet checkpoint, got kind '" +
                             std::string(model_kind_name(predictor_kind(p))) + "'");
}

inline int run_gen(const std::string& system, std::size_t n, std::size_t m, std::size_t l,
                   double dt, std::uint64_t seed, std::size_t substeps,
                   const std::string& params_json, const std::string& out) {
    SystemSpec spec;
    if (!params_json.empty()) {
        std::ifstream f(params_json);
        if (!f) throw std::runtime_error("cannot open params file: " + params_json);
        nlohmann::json j = nlohmann::json::parse(f);
        spec = spec_from_json(j.contains("spec") ? j["spec"] : j);
    } else {
        spec = make_spec(system, n, dt, substeps);
    }
    const Dataset ds = generate_dataset(spec, m, l, seed);
    write_dataset(out, ds, &spec);
    std::cout << "wrote " << out << ": system=" << system_name(ds.system)
              << " N=" << ds.n_agents << " d=" << ds.state_dim << " M=" << ds.num_sequences
              << " L=" << ds.seq_length << " dt=" << ds.dt << " seed=" << ds.seed << "\n";
    return 0;
}

inline int run_train(const std::string& data, const std::string& config,
                     const std::string& out) {
    const Dataset ds = read_dataset(data);
    const TrainSettings settings = load_train_config(config);
    if (settings.train.mode != TrainConfig::Mode::full)
        throw std::runtime_error("train runs in full mode; use the retune command instead");
    MagnetModel model =
        build_model(arch_for_system(ds.system), ds.n_agents, settings.train.seed,
                    system_is_second_order(ds.system), ds.dt);
    Dataset train_ds = ds;
    if (settings.noise)
        train_ds = make_noisy_observation_dataset(ds, settings.noise->sigma_scale,
                                                  settings.noise->seed, settings.noise->tv);
    const TrainResult result = train_single_step(model, train_ds, settings.train);
    Predictor p = std::move(model);
    write_checkpoint(out, p);
    std::cout << "trained " << settings.train.epochs << " epochs; validation loss "
              << result.trace.validation_initial << " -> " << result.final_validation << "\n"
              << "wrote " << out << "\n";
    return 0;
}

inline int run_retune(const std::string& ckpt, const std::string& data,
                      const std::string& config, const std::string& out) {
    MagnetModel model = require_magnet(read_checkpoint(ckpt), "retune");
    const Dataset stream = read_dataset(data);
    const TrainSettings settings = load_train_config(config);
    if (settings.noise) throw std::runtime_error("retune does not take a noise block");
    if (model.n_agents != stream.n_agents) {
        std::cout << "re-sizing wrapper from " << model.n_agents << " to " << stream.n_agents
                  << " agents (averaged pre-trained wrapper)\n";
        model = init_wrapper_from_pretrained(model, stream.n_agents);
    }
    const TrainResult result = retune_wrapper(model, stream, settings.train);
    Predictor p = std::move(model);
    write_checkpoint(out, p);
    std::cout << "re-tuned wrapper; validation loss " << result.trace.validation_initial
              << " -> " << result.final_validation << "\n"
              << "wrote " << out << "\n";
    return 0;
}

inline int run_eval(const std::string& ckpt, const std::string& data, std::size_t horizon,
                    const std::string& out_csv, bool noisy, std::size_t prefix,
                    double sigma_scale, std::uint64_t noise_seed) {
    Predictor predictor = read_checkpoint(ckpt);
    const Dataset test = read_dataset(data);
    EvalReport report;
    if (noisy) {
        const MagnetModel model = require_magnet(std::move(predictor), "noisy evaluation");
        report = evaluate_rollout_noisy(model, test, sigma_scale, noise_seed, horizon,
                                        TVConfig{}, prefix);
    } else {
        report = evaluate_rollout(predictor, test, horizon);
    }
    write_eval_csv(out_csv, report);
    std::cout << "evaluated " << report.n_sequences << " sequences to horizon "
              << report.horizon << "; MSE@" << report.horizon << " = "
              << report.mse_at(report.horizon) << "\n"
              << "wrote " << out_csv << "\n";
    return 0;
}

inline int run_baseline(const std::string& kind, const std::string& data,
                        const std::string& config, const std::string& out) {
    const Dataset ds = read_dataset(data);
    Predictor p;
    if (kind == "linear") {
        p = LinearMotionBaseline{ds.n_agents, ds.state_dim, ds.dt};
    } else if (kind == "mlp" || kind == "lstm") {
        if (config.empty())
            throw std::runtime_error("baseline --kind " + kind + " needs --config");
        const TrainSettings settings = load_train_config(config);
        if (settings.noise)
            throw std::runtime_error("baselines train on direct observations only");
        if (kind == "mlp") {
            MlpBaseline m = build_mlp_baseline(ds.n_agents, ds.state_dim, settings.train.seed);
            m.dt = ds.dt;
            const TrainResult r = train_single_step(m, ds, settings.train);
            std::cout << "mlp validation loss " << r.trace.validation_initial << " -> "
                      << r.final_validation << "\n";
            p = std::move(m);
        } else {
            LstmBaseline m = build_lstm_baseline(ds.n_agents, ds.state_dim, settings.train.seed);
            m.dt = ds.dt;
            const TrainResult r = train_single_step(m, ds, settings.train);
            std::cout << "lstm validation loss " << r.trace.validation_initial << " -> "
                      << r.final_validation << "\n";
            p = std::move(m);
        }
    } else {
        throw std::runtime_error("unknown baseline kind '" + kind +
                                 "' (expected linear|mlp|lstm)");
    }
    write_checkpoint(out, p);
    std::cout << "wrote " << out << "\n";
    return 0;
}

inline int run_inspect(const std::string& ckpt) {
    Predictor p = read_checkpoint(ckpt);
    const ModelKind kind = predictor_kind(p);
    std::cout << "kind: " << model_kind_name(kind) << "\n"
              << "agents: " << predictor_agents(p) << "\n"
              << "state_dim: " << predictor_state_dim(p) << "\n";
    if (auto* m = std::get_if<MagnetModel>(&p)) {
        const auto [core, wrapper] = count_params(*m);
        const std::size_t n = m->n_agents;
        std::cout << "deriv_dim: " << m->arch.deriv_dim << "\n"
                  << "integration: " << (m->second_order ? "second-order" : "first-order") << "\n"
                  << "dt: " << m->dt << "\n"
                  << "validation_loss: " << m->recorded_validation_loss << "\n"
                  << "core parameters: " << core << "\n"
                  << "wrapper parameters: " << wrapper << "\n"
                  << "total parameters: " << core + wrapper << "\n"
                  << "core flop estimate per step: " << 17880 * n << "\n"
                  << "wrapper flop estimate per step: " << 14 * n * n - 6 * n << "\n";
        std::cout << "tensors:\n";
        for (const NamedParam& t : m->parameters())
            std::cout << "  " << t.name << " " << t.tensor->shape_str() << "\n";
    } else if (auto* m = std::get_if<MlpBaseline>(&p)) {
        std::size_t total = 0;
        for (const NamedParam& t : m->parameters()) total += t.tensor->numel();
        std::cout << "dt: " << m->dt << "\n"
                  << "validation_loss: " << m->recorded_validation_loss << "\n"
                  << "total parameters: " << total << "\n";
    } else if (auto* m = std::get_if<LstmBaseline>(&p)) {
        std::size_t total = 0;
        for (const NamedParam& t : m->parameters()) total += t.tensor->numel();
        std::cout << "dt: " << m->dt << "\n"
                  << "validation_loss: " << m->recorded_validation_loss << "\n"
                  << "window: " << m->window << "\n"
                  << "total parameters: " << total << "\n";
    } else {
        std::cout << "total parameters: 0\n";
    }
    return 0;
}

}  // namespace cli_detail

// Entry point shared by the binary and the tests. Exit codes: 0 success,
// 1 usage error, 2 runtime failure.
inline int dispatch(std::vector<std::string> args) {
    CLI::App app{"MagNet multi-agent dynamics workbench"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a ground-truth dataset");
    std::string gen_system = "pm", gen_out, gen_params;
    std::size_t gen_n = 0, gen_m = 0, gen_l = 0, gen_substeps = 10;
    double gen_dt = 0.01;
    std::uint64_t gen_seed = 0;
    gen->add_option("--system", gen_system, "pm|kuramoto|swarm")
        ->check(CLI::IsMember({"pm", "kuramoto", "swarm"}))
        ->required();
    gen->add_option("--n", gen_n, "agent count (prey count for swarm; default per system)");
    gen->add_option("--m", gen_m, "number of sequences")->required();
    gen->add_option("--l", gen_l, "sequence length")->required();
    gen->add_option("--dt", gen_dt, "sampling period");
    gen->add_option("--seed", gen_seed, "dataset seed");
    gen->add_option("--substeps", gen_substeps, "integrator substeps per sample");
    gen->add_option("--params-json", gen_params,
                    "reuse physical parameters from a sidecar/spec JSON");
    gen->add_option("--out", gen_out, "output .magd path")->required();

    // train
    auto* train = app.add_subcommand("train", "train a MagNet model");
    std::string train_data, train_config, train_out;
    train->add_option("--data", train_data, "training dataset")->required();
    train->add_option("--config", train_config, "training config JSON")->required();
    train->add_option("--out", train_out, "output checkpoint")->required();

    // retune
    auto* retune = app.add_subcommand("retune", "re-tune the wrapper, core frozen");
    std::string retune_ckpt, retune_data, retune_config, retune_out;
    retune->add_option("--ckpt", retune_ckpt, "pre-trained checkpoint")->required();
    retune->add_option("--data", retune_data, "single observation sequence dataset")->required();
    retune->add_option("--config", retune_config, "training config JSON (wrapper-only mode)")
        ->required();
    retune->add_option("--out", retune_out, "output checkpoint")->required();

    // eval
    auto* eval = app.add_subcommand("eval", "initial-value rollout evaluation");
    std::string eval_ckpt, eval_data, eval_csv;
    std::size_t eval_horizon = 100, eval_prefix = kEvalPrefixLength;
    bool eval_noisy = false;
    double eval_sigma = 0.01;
    std::uint64_t eval_noise_seed = 1;
    eval->add_option("--ckpt", eval_ckpt, "checkpoint to evaluate")->required();
    eval->add_option("--data", eval_data, "test dataset")->required();
    eval->add_option("--horizon", eval_horizon, "prediction horizon (timesteps)");
    eval->add_option("--out-csv", eval_csv, "per-timestep MSE CSV")->required();
    eval->add_flag("--noisy", eval_noisy, "noisy protocol: denoising prefix, then rollout");
    eval->add_option("--prefix", eval_prefix, "denoising prefix length (16)");
    eval->add_option("--sigma-scale", eval_sigma, "observation noise scale");
    eval->add_option("--noise-seed", eval_noise_seed, "observation noise seed");

    // baseline
    auto* baseline = app.add_subcommand("baseline", "build/train a comparison predictor");
    std::string base_kind, base_data, base_config, base_out;
    baseline->add_option("--kind", base_kind, "linear|mlp|lstm")
        ->check(CLI::IsMember({"linear", "mlp", "lstm"}))
        ->required();
    baseline->add_option("--data", base_data, "training dataset")->required();
    baseline->add_option("--config", base_config, "training config JSON (mlp/lstm)");
    baseline->add_option("--out", base_out, "output checkpoint")->required();

    // inspect
    auto* inspect = app.add_subcommand("inspect", "print checkpoint metadata and counts");
    std::string inspect_ckpt;
    inspect->add_option("--ckpt", inspect_ckpt, "checkpoint path")->required();

    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (gen->parsed()) {
            if (gen_n == 0)
                gen_n = gen_system == "pm" ? 4 : (gen_system == "kuramoto" ? 8 : 20);
            return cli_detail::run_gen(gen_system, gen_n, gen_m, gen_l, gen_dt, gen_seed,
                                       gen_substeps, gen_params, gen_out);
        }
        if (train->parsed()) return cli_detail::run_train(train_data, train_config, train_out);
        if (retune->parsed())
            return cli_detail::run_retune(retune_ckpt, retune_data, retune_config, retune_out);
        if (eval->parsed())
            return cli_detail::run_eval(eval_ckpt, eval_data, eval_horizon, eval_csv, eval_noisy,
                                        eval_prefix, eval_sigma, eval_noise_seed);
        if (baseline->parsed())
            return cli_detail::run_baseline(base_kind, base_data, base_config, base_out);
        if (inspect->parsed()) return cli_detail::run_inspect(inspect_ckpt);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    std::cerr << "usage error: no subcommand\n\n" << app.help();
    return 1;
}

}  // namespace magnet
