#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "magnet/evaluate.hpp"

namespace magnet {

namespace io_detail {

inline void put_bytes(std::string& out, const void* p, std::size_t n) {
    out.append(static_cast<const char*>(p), n);
}

inline void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

inline void put_u16(std::string& out, std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class Reader {
public:
    Reader(std::string bytes, std::string label)
        : bytes_(std::move(bytes)), label_(std::move(label)) {}

    std::size_t remaining() const { return bytes_.size() - pos_; }

    void need(std::size_t n, const char* what) const {
        if (remaining() < n)
            throw std::runtime_error(label_ + ": truncated while reading " + what + " (need " +
                                     std::to_string(n) + " bytes, have " +
                                     std::to_string(remaining()) + ")");
    }

    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = 0;
        for (int i = 0; i < 2; ++i)
            v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes_[pos_++])) << (8 * i);
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_++])) << (8 * i);
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes_[pos_++])) << (8 * i);
        return v;
    }
    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    void f64_array(double* dst, std::size_t n, const char* what) {
        need(8 * n, what);
        for (std::size_t i = 0; i < n; ++i) dst[i] = f64(what);
    }

private:
    std::string bytes_;
    std::string label_;
    std::size_t pos_ = 0;
};

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace io_detail

inline constexpr std::uint16_t kDatasetVersion = 1;
inline constexpr std::uint16_t kCheckpointVersion = 1;

// ---------------------------------------------------------------------------
// Dataset file (MAGD): magic, version, system id, N, d, M, L, dt, then the
// payload of M*L*N*d little-endian doubles in [sequence][time][agent][dim]
// order. A JSON sidecar <name>.meta.json carries the generating spec + seed.
// ---------------------------------------------------------------------------

inline std::string sidecar_path(const std::string& dataset_path) {
    const std::string ext = ".magd";
    if (dataset_path.size() > ext.size() &&
        dataset_path.compare(dataset_path.size() - ext.size(), ext.size(), ext) == 0)
        return dataset_path.substr(0, dataset_path.size() - ext.size()) + ".meta.json";
    return dataset_path + ".meta.json";
}

inline nlohmann::json spec_to_json(const SystemSpec& spec) {
    nlohmann::json j;
    auto range = [](const Range& r) { return nlohmann::json::array({r.lo, r.hi}); };
    if (const auto* pm = std::get_if<PointMassSpec>(&spec)) {
        j["type"] = "point_mass";
        j["n_agents"] = pm->n_agents;
        j["masses"] = pm->masses;
        j["spring"] = pm->spring;
        j["repulsion"] = pm->repulsion;
        j["clip"] = pm->clip;
        j["dt"] = pm->dt;
        j["substeps"] = pm->substeps;
        j["mass_range"] = range(pm->mass_range);
        j["spring_range"] = range(pm->spring_range);
        j["position_range"] = range(pm->position_range);
        j["velocity_range"] = range(pm->velocity_range);
    } else if (const auto* ku = std::get_if<KuramotoSpec>(&spec)) {
        j["type"] = "kuramoto";
        j["n_agents"] = ku->n_agents;
        j["omega"] = ku->omega;
        j["coupling"] = ku->coupling;
        j["dt"] = ku->dt;
        j["substeps"] = ku->substeps;
        j["omega_range"] = range(ku->omega_range);
        j["coupling_range"] = range(ku->coupling_range);
    } else {
        const auto& sw = std::get<PredatorSwarmSpec>(spec);
        j["type"] = "predator_swarm";
        j["n_prey"] = sw.n_prey;
        j["a"] = sw.a;
        j["b"] = sw.b;
        j["c"] = sw.c;
        j["collision_eps"] = sw.collision_eps;
        j["dt"] = sw.dt;
        j["substeps"] = sw.substeps;
        j["prey_position_range"] = range(sw.prey_position_range);
        j["predator_position_range"] = range(sw.predator_position_range);
    }
    return j;
}

inline SystemSpec spec_from_json(const nlohmann::json& j) {
    auto range = [&j](const char* key, Range fallback) {
        if (!j.contains(key)) return fallback;
        return Range{j[key][0].get<double>(), j[key][1].get<double>()};
    };
    const std::string type = j.at("type").get<std::string>();
    if (type == "point_mass") {
        PointMassSpec s;
        s.n_agents = j.at("n_agents").get<std::size_t>();
        s.masses = j.value("masses", std::vector<double>{});
        s.spring = j.value("spring", std::vector<double>{});
        s.repulsion = j.value("repulsion", s.repulsion);
        s.clip = j.value("clip", s.clip);
        s.dt = j.at("dt").get<double>();
        s.substeps = j.value("substeps", s.substeps);
        s.mass_range = range("mass_range", s.mass_range);
        s.spring_range = range("spring_range", s.spring_range);
        s.position_range = range("position_range", s.position_range);
        s.velocity_range = range("velocity_range", s.velocity_range);
        return s;
    }
    if (type == "kuramoto") {
        KuramotoSpec s;
        s.n_agents = j.at("n_agents").get<std::size_t>();
        s.omega = j.value("omega", std::vector<double>{});
        s.coupling = j.value("coupling", std::vector<double>{});
        s.dt = j.at("dt").get<double>();
        s.substeps = j.value("substeps", s.substeps);
        s.omega_range = range("omega_range", s.omega_range);
        s.coupling_range = range("coupling_range", s.coupling_range);
        return s;
    }
    if (type == "predator_swarm") {
        PredatorSwarmSpec s;
        s.n_prey = j.at("n_prey").get<std::size_t>();
        s.a = j.value("a", s.a);
        s.b = j.value("b", s.b);
        s.c = j.value("c", s.c);
        s.collision_eps = j.value("collision_eps", s.collision_eps);
        s.dt = j.at("dt").get<double>();
        s.substeps = j.value("substeps", s.substeps);
        s.prey_position_range = range("prey_position_range", s.prey_position_range);
        s.predator_position_range = range("predator_position_range", s.predator_position_range);
        return s;
    }
    throw std::runtime_error("sidecar: unknown system type '" + type + "'");
}

inline void write_dataset(const std::string& path, const Dataset& ds,
                          const SystemSpec* spec = nullptr) {
    std::string out;
    out.reserve(38 + 8 * ds.states.size());
    out += "MAGD";
    io_detail::put_u16(out, kDatasetVersion);
    io_detail::put_u8(out, static_cast<std::uint8_t>(ds.system));
    io_detail::put_u32(out, static_cast<std::uint32_t>(ds.n_agents));
    io_detail::put_u32(out, static_cast<std::uint32_t>(ds.state_dim));
    io_detail::put_u32(out, static_cast<std::uint32_t>(ds.num_sequences));
    io_detail::put_u32(out, static_cast<std::uint32_t>(ds.seq_length));
    io_detail::put_f64(out, ds.dt);
    for (double v : ds.states) io_detail::put_f64(out, v);
    io_detail::write_file(path, out);
    if (spec) {
        nlohmann::json meta;
        meta["format"] = "magd-meta";
        meta["version"] = 1;
        meta["system"] = system_name(ds.system);
        meta["seed"] = ds.seed;
        meta["spec"] = spec_to_json(*spec);
        std::ofstream f(sidecar_path(path), std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open for writing: " + sidecar_path(path));
        f << meta.dump(2) << "\n";
    }
}

inline Dataset read_dataset(const std::string& path) {
    io_detail::Reader r(io_detail::read_file(path), path);
    if (r.str(4, "magic") != "MAGD") throw std::runtime_error(path + ": not a MAGD file");
    const std::uint16_t version = r.u16("version");
    if (version != kDatasetVersion)
        throw std::runtime_error(path + ": unsupported MAGD version " + std::to_string(version));
    Dataset ds;
    const std::uint8_t sys = r.u8("system id");
    if (sys > 2) throw std::runtime_error(path + ": unknown system id " + std::to_string(sys));
    ds.system = static_cast<SystemId>(sys);
    ds.n_agents = r.u32("agent count");
    ds.state_dim = r.u32("state dim");
    ds.num_sequences = r.u32("sequence count");
    ds.seq_length = r.u32("sequence length");
    ds.dt = r.f64("dt");
    const std::size_t count = ds.num_sequences * ds.seq_length * ds.n_agents * ds.state_dim;
    if (r.remaining() != 8 * count)
        throw std::runtime_error(path + ": payload is " + std::to_string(r.remaining()) +
                                 " bytes, header implies " + std::to_string(8 * count));
    ds.states.resize(count);
    r.f64_array(ds.states.data(), count, "payload");
    // seed lives in the sidecar; the binary payload alone does not need it
    std::ifstream side(sidecar_path(path));
    if (side) {
        nlohmann::json meta = nlohmann::json::parse(side, nullptr, true);
        ds.seed = meta.value("seed", std::uint64_t{0});
    }
    return ds;
}

inline SystemSpec read_dataset_spec(const std::string& dataset_path) {
    std::ifstream side(sidecar_path(dataset_path));
    if (!side) throw std::runtime_error("missing sidecar: " + sidecar_path(dataset_path));
    nlohmann::json meta = nlohmann::json::parse(side);
    return spec_from_json(meta.at("spec"));
}

// ---------------------------------------------------------------------------
// Checkpoint file (MAGC): magic, version, model kind, arch metadata, the
// standardizer, then a named tensor table. Round-trips are bitwise.
// ---------------------------------------------------------------------------

enum class ModelKind : std::uint8_t { magnet = 0, mlp = 1, lstm = 2, linear = 3 };

inline ModelKind predictor_kind(const Predictor& p) {
    if (std::holds_alternative<MagnetModel>(p)) return ModelKind::magnet;
    if (std::holds_alternative<MlpBaseline>(p)) return ModelKind::mlp;
    if (std::holds_alternative<LstmBaseline>(p)) return ModelKind::lstm;
    return ModelKind::linear;
}

inline const char* model_kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::magnet: return "magnet";
        case ModelKind::mlp: return "mlp";
        case ModelKind::lstm: return "lstm";
        case ModelKind::linear: return "linear";
    }
    return "?";
}

namespace io_detail {

inline void put_standardizer(std::string& out, const Standardizer& z) {
    put_u32(out, static_cast<std::uint32_t>(z.dims()));
    for (double v : z.mean) put_f64(out, v);
    for (double v : z.stddev) put_f64(out, v);
}

inline Standardizer get_standardizer(Reader& r) {
    Standardizer z;
    const std::uint32_t dims = r.u32("standardizer dims");
    z.mean.resize(dims);
    z.stddev.resize(dims);
    r.f64_array(z.mean.data(), dims, "standardizer mean");
    r.f64_array(z.stddev.data(), dims, "standardizer std");
    return z;
}

inline void put_tensor_table(std::string& out, const std::vector<NamedParam>& params) {
    put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const NamedParam& p : params) {
        put_u16(out, static_cast<std::uint16_t>(p.name.size()));
        put_bytes(out, p.name.data(), p.name.size());
        put_u8(out, static_cast<std::uint8_t>(p.tensor->rank()));
        for (std::size_t d : p.tensor->shape) put_u32(out, static_cast<std::uint32_t>(d));
        for (double v : p.tensor->data) put_f64(out, v);
    }
}

inline void get_tensor_table(Reader& r, std::vector<NamedParam> params,
                             const std::string& label) {
    const std::uint32_t count = r.u32("tensor count");
    if (count != params.size())
        throw std::runtime_error(label + ": tensor table holds " + std::to_string(count) +
                                 " entries, model expects " + std::to_string(params.size()));
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::uint16_t len = r.u16("tensor name length");
        const std::string name = r.str(len, "tensor name");
        NamedParam* target = nullptr;
        for (NamedParam& p : params)
            if (p.name == name) {
                target = &p;
                break;
            }
        if (!target) throw std::runtime_error(label + ": unknown tensor '" + name + "'");
        const std::uint8_t rank = r.u8("tensor rank");
        std::vector<std::size_t> shape(rank);
        for (std::uint8_t i = 0; i < rank; ++i) shape[i] = r.u32("tensor dim");
        if (shape != target->tensor->shape)
            throw std::runtime_error(label + ": shape mismatch for tensor '" + name + "'");
        r.f64_array(target->tensor->data.data(), target->tensor->numel(), "tensor data");
    }
}

}  // namespace io_detail

inline void write_checkpoint(const std::string& path, Predictor& predictor) {
    std::string out;
    out += "MAGC";
    io_detail::put_u16(out, kCheckpointVersion);
    const ModelKind kind = predictor_kind(predictor);
    io_detail::put_u8(out, static_cast<std::uint8_t>(kind));
    if (auto* m = std::get_if<MagnetModel>(&predictor)) {
        io_detail::put_u32(out, static_cast<std::uint32_t>(m->n_agents));
        io_detail::put_u32(out, static_cast<std::uint32_t>(m->arch.input_dim));
        io_detail::put_u32(out, static_cast<std::uint32_t>(m->arch.deriv_dim));
        io_detail::put_u32(out, static_cast<std::uint32_t>(m->arch.h_width1));
        io_detail::put_u32(out, static_cast<std::uint32_t>(m->arch.h_width2));
        io_detail::put_u32(out, static_cast<std::uint32_t>(m->arch.f_width1));
        io_detail::put_u32(out, static_cast<std::uint32_t>(m->arch.f_width2));
        io_detail::put_u32(out, static_cast<std::uint32_t>(m->arch.g1_width));
        io_detail::put_u8(out, m->second_order ? 1 : 0);
        io_detail::put_f64(out, m->dt);
        io_detail::put_f64(out, m->recorded_validation_loss);
        io_detail::put_standardizer(out, m->standardizer);
        io_detail::put_tensor_table(out, m->parameters());
    } else if (auto* m = std::get_if<MlpBaseline>(&predictor)) {
        io_detail::put_u32(out, static_cast<std::uint32_t>(m->n_agents));
        io_detail::put_u32(out, static_cast<std::uint32_t>(m->state_dim));
        io_detail::put_f64(out, m->dt);
        io_detail::put_f64(out, m->recorded_validation_loss);
        io_detail::put_standardizer(out, m->standardizer);
        io_detail::put_tensor_table(out, m->parameters());
    } else if (auto* m = std::get_if<LstmBaseline>(&predictor)) {
        io_detail::put_u32(out, static_cast<std::uint32_t>(m->n_agents));
        io_detail::put_u32(out, static_cast<std::uint32_t>(m->state_dim));
        io_detail::put_u32(out, static_cast<std::uint32_t>(m->hidden));
        io_detail::put_u32(out, static_cast<std::uint32_t>(m->window));
        io_detail::put_f64(out, m->dt);
        io_detail::put_f64(out, m->recorded_validation_loss);
        io_detail::put_standardizer(out, m->standardizer);
        io_detail::put_tensor_table(out, m->parameters());
    } else {
        const auto& lin = std::get<LinearMotionBaseline>(predictor);
        io_detail::put_u32(out, static_cast<std::uint32_t>(lin.n_agents));
        io_detail::put_u32(out, static_cast<std::uint32_t>(lin.state_dim));
        io_detail::put_f64(out, lin.dt);
    }
    io_detail::write_file(path, out);
}

inline Predictor read_checkpoint(const std::string& path) {
    io_detail::Reader r(io_detail::read_file(path), path);
    if (r.str(4, "magic") != "MAGC") throw std::runtime_error(path + ": not a MAGC file");
    const std::uint16_t version = r.u16("version");
    if (version != kCheckpointVersion)
        throw std::runtime_error(path + ": unsupported MAGC version " + std::to_string(version));
    const std::uint8_t kind = r.u8("model kind");
    if (kind > 3)
        throw std::runtime_error(path + ": unknown model kind tag " + std::to_string(kind));
    switch (static_cast<ModelKind>(kind)) {
        case ModelKind::magnet: {
            const std::uint32_t n = r.u32("agent count");
            ArchConfig arch;
            arch.input_dim = r.u32("input dim");
            arch.deriv_dim = r.u32("deriv dim");
            arch.h_width1 = r.u32("h width 1");
            arch.h_width2 = r.u32("h width 2");
            arch.f_width1 = r.u32("f width 1");
            arch.f_width2 = r.u32("f width 2");
            arch.g1_width = r.u32("g1 width");
            const bool second_order = r.u8("integration order") != 0;
            const double dt = r.f64("dt");
            const double val = r.f64("validation loss");
            MagnetModel m = build_model(arch, n, 0, second_order, dt);
            m.recorded_validation_loss = val;
            m.standardizer = io_detail::get_standardizer(r);
            io_detail::get_tensor_table(r, m.parameters(), path);
            return m;
        }
        case ModelKind::mlp: {
            const std::uint32_t n = r.u32("agent count");
            const std::uint32_t d = r.u32("state dim");
            const double dt = r.f64("dt");
            const double val = r.f64("validation loss");
            MlpBaseline m = build_mlp_baseline(n, d, 0);
            m.dt = dt;
            m.recorded_validation_loss = val;
            m.standardizer = io_detail::get_standardizer(r);
            io_detail::get_tensor_table(r, m.parameters(), path);
            return m;
        }
        case ModelKind::lstm: {
            const std::uint32_t n = r.u32("agent count");
            const std::uint32_t d = r.u32("state dim");
            const std::uint32_t hidden = r.u32("hidden");
            const std::uint32_t window = r.u32("window");
            const double dt = r.f64("dt");
            const double val = r.f64("validation loss");
            LstmBaseline m = build_lstm_baseline(n, d, 0);
            if (m.hidden != hidden || m.window != window)
                throw std::runtime_error(path + ": unsupported LSTM geometry");
            m.dt = dt;
            m.recorded_validation_loss = val;
            m.standardizer = io_detail::get_standardizer(r);
            io_detail::get_tensor_table(r, m.parameters(), path);
            return m;
        }
        case ModelKind::linear: {
            LinearMotionBaseline m;
            m.n_agents = r.u32("agent count");
            m.state_dim = r.u32("state dim");
            m.dt = r.f64("dt");
            return m;
        }
    }
    throw std::runtime_error(path + ": unreachable model kind");
}

// ---------------------------------------------------------------------------
// Evaluation CSV
// ---------------------------------------------------------------------------

inline std::string eval_report_csv(const EvalReport& report) {
    std::string out = "timestep,mse_mean,ci_low,ci_high\n";
    char buf[96];
    for (std::size_t t = 1; t <= report.horizon; ++t) {
        const double m = report.mse_mean[t - 1];
        const double h = report.ci_half[t - 1];
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", t, m, m - h, m + h);
        out += buf;
    }
    return out;
}

inline void write_eval_csv(const std::string& path, const EvalReport& report) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << eval_report_csv(report);
}

}  // namespace magnet
