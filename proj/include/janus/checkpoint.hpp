#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "janus/config.hpp"
#include "janus/genome.hpp"
#include "janus/model.hpp"
#include "janus/rng.hpp"

namespace janus {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian");

/// Optimizer and loop state; serialized whole so a resumed run is bitwise
/// the run that never stopped.
struct TrainState {
    long step = 0;
    double last_ce = 0;
    double best_ce = std::numeric_limits<double>::infinity();
    std::vector<Tensor<float>> m;  // first moments, aligned with the parameter table
    std::vector<Tensor<float>> v;  // second moments
    Rng rng{1};

    static TrainState fresh(const std::vector<Parameter<float>>& params, uint64_t seed) {
        TrainState s;
        s.rng = Rng(seed);
        for (const auto& p : params) {
            s.m.push_back(Tensor<float>::zeros(p.value.shape));
            s.v.push_back(Tensor<float>::zeros(p.value.shape));
        }
        return s;
    }
    static TrainState fresh(const std::vector<Parameter<float>*>& params, uint64_t seed) {
        TrainState s;
        s.rng = Rng(seed);
        for (const auto* p : params) {
            s.m.push_back(Tensor<float>::zeros(p->value.shape));
            s.v.push_back(Tensor<float>::zeros(p->value.shape));
        }
        return s;
    }
};

namespace ckptdetail {

constexpr char kMagic[4] = {'J', 'N', 'S', 'C'};
constexpr uint16_t kVersion = 1;

template <class T>
void wr(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
inline void wr_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
}
inline void wr_str(std::ostream& os, const std::string& s) {
    wr<uint32_t>(os, static_cast<uint32_t>(s.size()));
    wr_bytes(os, s.data(), s.size());
}

template <class T>
T rd(std::istream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}
inline void rd_bytes(std::istream& is, void* p, size_t n) {
    is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
}
inline std::string rd_str(std::istream& is) {
    const uint32_t n = rd<uint32_t>(is);
    std::string s(n, '\0');
    if (n) rd_bytes(is, s.data(), n);
    return s;
}

}  // namespace ckptdetail

/// Contents of a checkpoint file before binding to a model.
struct RawCheckpoint {
    RunConfig cfg;
    std::string vocab;
    std::vector<Parameter<float>> params;
    bool has_state = false;
    TrainState state;
};

inline void save_checkpoint(const std::string& path, const RunConfig& cfg,
                            const std::vector<Parameter<float>>& params, const TrainState* state) {
    using namespace ckptdetail;
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot write " + path);
    wr_bytes(os, kMagic, 4);
    wr<uint16_t>(os, kVersion);
    wr_str(os, serialize(cfg));
    wr_str(os, Vocabulary::canonical());
    wr<uint32_t>(os, static_cast<uint32_t>(params.size()));
    for (const auto& p : params) {
        wr_str(os, p.name);
        wr<uint8_t>(os, static_cast<uint8_t>(p.kind));
        wr<uint8_t>(os, static_cast<uint8_t>(p.value.shape.size()));
        for (long d : p.value.shape) wr<int64_t>(os, d);
        wr_bytes(os, p.value.data.data(), p.value.data.size() * sizeof(float));
    }
    wr<uint8_t>(os, state ? 1 : 0);
    if (state) {
        if (state->m.size() != params.size() || state->v.size() != params.size())
            throw std::runtime_error("checkpoint: optimizer state does not match parameter table");
        wr<int64_t>(os, state->step);
        wr<double>(os, state->last_ce);
        wr<double>(os, state->best_ce);
        for (size_t i = 0; i < params.size(); ++i) {
            wr_bytes(os, state->m[i].data.data(), state->m[i].data.size() * sizeof(float));
            wr_bytes(os, state->v[i].data.data(), state->v[i].data.size() * sizeof(float));
        }
        wr_str(os, state->rng.save_state());
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline RawCheckpoint load_checkpoint(const std::string& path) {
    using namespace ckptdetail;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    rd_bytes(is, magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("checkpoint: bad magic in " + path);
    const uint16_t version = rd<uint16_t>(is);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) + " in " + path);

    RawCheckpoint raw;
    {
        ConfigMap cm;
        cm.load_text(rd_str(is), path + " (embedded config)");
        raw.cfg = cm.materialize();
    }
    raw.vocab = rd_str(is);
    if (raw.vocab != Vocabulary::canonical())
        throw std::runtime_error("checkpoint: vocabulary table mismatch in " + path);
    const uint32_t n = rd<uint32_t>(is);
    for (uint32_t i = 0; i < n; ++i) {
        std::string name = rd_str(is);
        const auto kind = static_cast<ParamKind>(rd<uint8_t>(is));
        const uint8_t rank = rd<uint8_t>(is);
        std::vector<long> shape;
        for (uint8_t r = 0; r < rank; ++r) shape.push_back(static_cast<long>(rd<int64_t>(is)));
        Tensor<float> val = Tensor<float>::zeros(shape);
        rd_bytes(is, val.data.data(), val.data.size() * sizeof(float));
        raw.params.emplace_back(std::move(name), kind, std::move(val));
    }
    raw.has_state = rd<uint8_t>(is) != 0;
    if (raw.has_state) {
        raw.state.step = static_cast<long>(rd<int64_t>(is));
        raw.state.last_ce = rd<double>(is);
        raw.state.best_ce = rd<double>(is);
        for (const auto& p : raw.params) {
            Tensor<float> m = Tensor<float>::zeros(p.value.shape);
            rd_bytes(is, m.data.data(), m.data.size() * sizeof(float));
            raw.state.m.push_back(std::move(m));
            Tensor<float> v = Tensor<float>::zeros(p.value.shape);
            rd_bytes(is, v.data.data(), v.data.size() * sizeof(float));
            raw.state.v.push_back(std::move(v));
        }
        raw.state.rng.load_state(rd_str(is));
    }
    return raw;
}

/// Binds checkpointed parameters onto a freshly initialized model. Every model
/// parameter must be present with a matching shape; surplus entries (e.g. a
/// classifier head) are returned for the caller to claim.
inline std::vector<Parameter<float>> restore_model(const RawCheckpoint& raw, JanusModel<float>& model) {
    std::vector<Parameter<float>> leftovers;
    size_t matched = 0;
    for (const auto& e : raw.params) {
        if (!model.has(e.name)) {
            leftovers.push_back(e);
            continue;
        }
        Parameter<float>& p = model.p(e.name);
        if (p.value.shape != e.value.shape)
            throw std::runtime_error("checkpoint: parameter '" + e.name + "' has shape " +
                                     shape_str(e.value.shape) + ", model expects " + shape_str(p.value.shape));
        p.value = e.value;
        ++matched;
    }
    if (matched != model.params.size())
        throw std::runtime_error("checkpoint: missing parameters for this model configuration");
    return leftovers;
}

/// Convenience: model + state from a checkpoint file.
inline std::pair<JanusModel<float>, TrainState> load_model(const std::string& path) {
    RawCheckpoint raw = load_checkpoint(path);
    JanusModel<float> model = JanusModel<float>::init(raw.cfg.model);
    restore_model(raw, model);
    TrainState st = raw.has_state ? raw.state : TrainState::fresh(model.params, raw.cfg.train.seed);
    return {std::move(model), std::move(st)};
}

}  // namespace janus
