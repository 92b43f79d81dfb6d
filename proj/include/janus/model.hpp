#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "janus/config.hpp"
#include "janus/rng.hpp"
#include "janus/tape.hpp"

namespace janus {

/// Named parameter table for the two directional encoders, the fusion
/// attention and the output head. Creation order is deterministic; checkpoints
/// and optimizer state rely on it.
template <class Real>
struct JanusModel {
    ModelConfig cfg;
    std::vector<Parameter<Real>> params;
    std::map<std::string, size_t> by_name;

    Parameter<Real>& p(const std::string& name) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw std::runtime_error("model: no parameter named '" + name + "'");
        return params[it->second];
    }
    const Parameter<Real>& p(const std::string& name) const {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw std::runtime_error("model: no parameter named '" + name + "'");
        return params[it->second];
    }
    bool has(const std::string& name) const { return by_name.count(name) != 0; }

    void zero_grads() {
        for (auto& p : params) p.zero_grad();
    }

    void add(const std::string& name, ParamKind kind, Tensor<Real> value) {
        if (by_name.count(name)) throw std::runtime_error("model: duplicate parameter '" + name + "'");
        by_name[name] = params.size();
        params.emplace_back(name, kind, std::move(value));
    }

    static JanusModel init(const ModelConfig& cfg) {
        cfg.validate();
        JanusModel m;
        m.cfg = cfg;
        Rng rng(cfg.seed);
        const long d = cfg.d_model, V = cfg.vocab_size, e = 2 * d, hd = d / cfg.n_heads;

        auto weight = [&](const std::string& name, long rows, long cols, long fan_in) {
            Tensor<Real> w = Tensor<Real>::zeros({rows, cols});
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (Real& v : w.data) v = static_cast<Real>(rng.uniform(-bound, bound));
            m.add(name, ParamKind::weight, std::move(w));
        };
        auto bias = [&](const std::string& name, long n) { m.add(name, ParamKind::bias, Tensor<Real>::zeros({n})); };
        auto gain = [&](const std::string& name, long n) { m.add(name, ParamKind::gain, Tensor<Real>::full({n}, Real(1))); };
        auto embedding = [&](const std::string& name, long rows, long cols) {
            Tensor<Real> w = Tensor<Real>::zeros({rows, cols});
            const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
            for (Real& v : w.data) v = static_cast<Real>(rng.uniform(-bound, bound));
            m.add(name, ParamKind::embedding, std::move(w));
        };
        auto ffn_params = [&](const std::string& prefix) {
            gain(prefix + ".gain", d);
            weight(prefix + ".w1", d, cfg.ffn_mult * d, d);
            weight(prefix + ".w2", cfg.ffn_mult * d, d, cfg.ffn_mult * d);
        };
        auto attn_params = [&](const std::string& prefix) {
            for (long h = 0; h < cfg.n_heads; ++h) {
                const std::string hp = prefix + ".h" + std::to_string(h);
                weight(hp + ".wq", d, hd, d);
                weight(hp + ".wk", d, hd, d);
                weight(hp + ".wv", d, hd, d);
            }
            weight(prefix + ".w_o", d, d, d);
        };

        for (const char* dir : {"fwd", "bwd"}) {
            const std::string D(dir);
            embedding(D + ".embed", V, d);
            for (long l = 0; l < cfg.n_layers; ++l) {
                const std::string L = D + ".l" + std::to_string(l);
                if (l == cfg.mid_attention) {
                    attn_params(L + ".attn");
                } else {
                    weight(L + ".scan.w_in", d, e, d);
                    weight(L + ".scan.w_gate", d, e, d);
                    weight(L + ".scan.w_alpha", d, e, d);
                    bias(L + ".scan.b_alpha", e);
                    weight(L + ".scan.w_out", e, d, e);
                }
                if (cfg.layer_is_moe(l)) {
                    const std::string M = L + ".moe";
                    gain(M + ".gain", d);
                    weight(M + ".router.w", d, cfg.n_experts, d);
                    bias(M + ".router.b", cfg.n_experts);
                    for (long x = 0; x < cfg.n_experts; ++x) {
                        const std::string E = M + ".e" + std::to_string(x);
                        weight(E + ".w1", d, cfg.ffn_mult * d, d);
                        weight(E + ".w2", cfg.ffn_mult * d, d, cfg.ffn_mult * d);
                    }
                } else {
                    ffn_params(L + ".ffn");
                }
            }
            gain(D + ".final_gain", d);
        }
        attn_params("fuse");
        gain("fuse.gain", d);
        // zero-initialized head: an untrained model emits exactly uniform logits
        m.add("head.w", ParamKind::weight, Tensor<Real>::zeros({d, V}));
        bias("head.b", V);
        return m;
    }
};

struct ParamAudit {
    long total = 0;
    long activated = 0;
};

/// Parameters touched per token (dense path plus one expert per MoE layer)
/// versus everything including idle experts.
template <class Real>
ParamAudit audit_params(const JanusModel<Real>& m) {
    ParamAudit a;
    for (const auto& p : m.params) {
        a.total += p.value.numel();
        const size_t pos = p.name.find(".moe.e");
        bool idle_expert = false;
        if (pos != std::string::npos) {
            // ".moe.e<k>." with k > 0 counts only toward the total
            size_t i = pos + 6;
            std::string num;
            while (i < p.name.size() && std::isdigit(static_cast<unsigned char>(p.name[i]))) num.push_back(p.name[i++]);
            idle_expert = !num.empty() && std::stol(num) > 0;
        }
        if (!idle_expert) a.activated += p.value.numel();
    }
    return a;
}

}  // namespace janus
