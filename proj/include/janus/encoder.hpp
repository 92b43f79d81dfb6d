#pragma once

#include <map>
#include <string>
#include <vector>

#include "janus/model.hpp"
#include "janus/ops.hpp"

namespace janus {

/// Model bound onto one tape for one forward pass. Each parameter becomes a
/// single leaf node no matter how many sequences of the batch touch it, so
/// gradients accumulate across the batch for free.
template <class Real>
struct BoundModel {
    Tape<Real>& tape;
    JanusModel<Real>& model;
    std::map<std::string, Var> leaves;

    BoundModel(Tape<Real>& t, JanusModel<Real>& m) : tape(t), model(m) {}

    Var operator[](const std::string& name) {
        auto it = leaves.find(name);
        if (it != leaves.end()) return it->second;
        Var v = tape.use(model.p(name));
        leaves.emplace(name, v);
        return v;
    }
};

/// Per-MoE-layer dispatch and probability fractions (Switch-style balance
/// bookkeeping): f_i counts argmax dispatches, P_i averages router
/// probability, both over the tokens seen.
struct RouterStats {
    std::vector<double> f;
    std::vector<double> P;
    long tokens = 0;

    double balance() const {  // N * sum_i f_i P_i
        double s = 0;
        for (size_t i = 0; i < f.size(); ++i) s += f[i] * P[i];
        return static_cast<double>(f.size()) * s;
    }
};

/// Host-side auxiliary loss over a batch's router stats: mean over MoE layers
/// of alpha * N * sum_i f_i P_i. The taped training path mirrors this formula;
/// this one exists for closed-form checks and metric logging.
inline double aux_loss_value(const std::vector<RouterStats>& stats, double alpha) {
    if (stats.empty()) return 0.0;
    double total = 0;
    for (const RouterStats& s : stats) total += alpha * s.balance();
    return total / static_cast<double>(stats.size());
}

/// One routed token batch: hard assignments plus everything the taped
/// auxiliary loss needs.
template <class Real>
struct Routing {
    std::vector<int> expert_of;  // argmax per token, lowest index wins ties
    Var probs = -1;              // [T, n_experts] softmax rows
    Var chosen_prob = -1;        // [T, 1] probability of the dispatched expert
    RouterStats stats;
};

/// Softmax router with top-1 dispatch.
template <class Real>
Routing<Real> route_top1(BoundModel<Real>& bm, Var u, const std::string& prefix, long n_experts) {
    if (n_experts < 1) throw std::runtime_error("route_top1: need at least one expert");
    Tape<Real>& t = bm.tape;
    Var logits = add_rowvec(t, matmul(t, u, bm[prefix + ".w"]), bm[prefix + ".b"]);
    Routing<Real> r;
    r.probs = softmax_rows(t, logits);
    const Tensor<Real>& P = t.val(r.probs);
    const long T = P.rows(), N = P.cols();
    r.expert_of.resize(static_cast<size_t>(T));
    r.stats.f.assign(static_cast<size_t>(N), 0.0);
    r.stats.P.assign(static_cast<size_t>(N), 0.0);
    r.stats.tokens = T;
    for (long i = 0; i < T; ++i) {
        int best = 0;
        for (long j = 1; j < N; ++j)
            if (P.at(i, j) > P.at(i, best)) best = static_cast<int>(j);
        r.expert_of[static_cast<size_t>(i)] = best;
        r.stats.f[static_cast<size_t>(best)] += 1.0;
        for (long j = 0; j < N; ++j) r.stats.P[static_cast<size_t>(j)] += static_cast<double>(P.at(i, j));
    }
    for (long j = 0; j < N; ++j) {
        r.stats.f[static_cast<size_t>(j)] /= static_cast<double>(T);
        r.stats.P[static_cast<size_t>(j)] /= static_cast<double>(T);
    }
    r.chosen_prob = select_entries(t, r.probs, r.expert_of);
    return r;
}

/// Gated causal recurrence block (the Mamba stand-in): expanded input and
/// gate projections, an input-dependent leaky accumulator, SiLU gating,
/// projection back to width d, residual. Strictly causal.
template <class Real>
Var gated_recurrence_scan(BoundModel<Real>& bm, Var u, const std::string& prefix) {
    Tape<Real>& t = bm.tape;
    Var x = matmul(t, u, bm[prefix + ".w_in"]);
    Var z = matmul(t, u, bm[prefix + ".w_gate"]);
    Var alpha = sigmoid(t, add_rowvec(t, matmul(t, u, bm[prefix + ".w_alpha"]), bm[prefix + ".b_alpha"]));
    Var s = ema_scan(t, alpha, x);
    Var y = matmul(t, mul(t, s, silu(t, z)), bm[prefix + ".w_out"]);
    return add(t, u, y);
}

/// Position-wise feedforward with pre-norm on the branch: u + W2 SiLU(W1 RMSNorm(u)).
template <class Real>
Var ffn_forward(BoundModel<Real>& bm, Var u, const std::string& prefix) {
    Tape<Real>& t = bm.tape;
    Var v = rmsnorm_rows(t, u, bm[prefix + ".gain"]);
    Var y = matmul(t, silu(t, matmul(t, v, bm[prefix + ".w1"])), bm[prefix + ".w2"]);
    return add(t, u, y);
}

/// Multi-head scaled dot-product attention restricted by `mask`; returns the
/// output projection (no residual). `head_probs`, when given, receives each
/// head's attention rows for inspection.
template <class Real>
Var multi_head_attention(BoundModel<Real>& bm, Var x, const BoolGrid& mask, const std::string& prefix,
                         long n_heads, std::vector<Var>* head_probs = nullptr) {
    Tape<Real>& t = bm.tape;
    const long d = t.val(x).cols();
    const long hd = d / n_heads;
    const Real inv_sqrt = Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(hd)));
    Var cat = -1;
    for (long h = 0; h < n_heads; ++h) {
        const std::string hp = prefix + ".h" + std::to_string(h);
        Var q = matmul(t, x, bm[hp + ".wq"]);
        Var k = matmul(t, x, bm[hp + ".wk"]);
        Var v = matmul(t, x, bm[hp + ".wv"]);
        Var scores = scale(t, matmul_nt(t, q, k), inv_sqrt);
        Var probs = softmax_rows(t, scores, &mask);
        if (head_probs) head_probs->push_back(probs);
        Var o = matmul(t, probs, v);
        cat = h == 0 ? o : concat_cols(t, cat, o);
    }
    return matmul(t, cat, bm[prefix + ".w_o"]);
}

inline BoolGrid causal_mask(long T) {
    BoolGrid m(T, T);
    for (long q = 0; q < T; ++q)
        for (long k = 0; k <= q; ++k) m.set(q, k, true);
    return m;
}

/// The optional mid-stack mixer: lower-triangular multi-head attention with a
/// residual, replacing the recurrence at one layer.
template <class Real>
Var causal_attention_block(BoundModel<Real>& bm, Var u, const std::string& prefix, long n_heads) {
    Tape<Real>& t = bm.tape;
    const BoolGrid mask = causal_mask(t.val(u).rows());
    return add(t, u, multi_head_attention(bm, u, mask, prefix, n_heads));
}

/// Top-1 mixture of experts sharing the FFN shape: tokens are dispatched to
/// their argmax expert, the expert output is scaled by the routing probability
/// (so the router trains through the chosen path), residual added.
template <class Real>
std::pair<Var, Routing<Real>> moe_forward(BoundModel<Real>& bm, Var u, const std::string& prefix) {
    Tape<Real>& t = bm.tape;
    const long T = t.val(u).rows();
    const long N = bm.model.cfg.n_experts;
    Var v = rmsnorm_rows(t, u, bm[prefix + ".gain"]);
    Routing<Real> r = route_top1(bm, v, prefix + ".router", N);
    Var combined = -1;
    for (long x = 0; x < N; ++x) {
        std::vector<long> idx;
        for (long i = 0; i < T; ++i)
            if (r.expert_of[static_cast<size_t>(i)] == x) idx.push_back(i);
        if (idx.empty()) continue;
        const std::string E = prefix + ".e" + std::to_string(x);
        Var g = gather_rows(t, v, idx);
        Var h = matmul(t, silu(t, matmul(t, g, bm[E + ".w1"])), bm[E + ".w2"]);
        Var part = scatter_rows(t, h, std::move(idx), T);
        combined = combined < 0 ? part : add(t, combined, part);
    }
    Var scaled = mul_colvec(t, combined, r.chosen_prob);
    return {add(t, u, scaled), std::move(r)};
}

template <class Real>
struct EncoderTrace {
    Var states = -1;  // [T, d], aligned to original positions
    std::vector<Routing<Real>> moe;
};

/// One directional stack without any reversal bookkeeping: embedding,
/// n_layers of mixer + channel block, final RMSNorm.
template <class Real>
EncoderTrace<Real> encode_stack(BoundModel<Real>& bm, const std::vector<int>& ids, const std::string& dir) {
    Tape<Real>& t = bm.tape;
    const ModelConfig& cfg = bm.model.cfg;
    EncoderTrace<Real> trace;
    Var x = embedding_rows(t, bm[dir + ".embed"], ids);
    for (long l = 0; l < cfg.n_layers; ++l) {
        const std::string L = dir + ".l" + std::to_string(l);
        if (l == cfg.mid_attention)
            x = causal_attention_block(bm, x, L + ".attn", cfg.n_heads);
        else
            x = gated_recurrence_scan(bm, x, L + ".scan");
        if (cfg.layer_is_moe(l)) {
            auto [y, routing] = moe_forward(bm, x, L + ".moe");
            x = y;
            trace.moe.push_back(std::move(routing));
        } else {
            x = ffn_forward(bm, x, L + ".ffn");
        }
    }
    trace.states = rmsnorm_rows(t, x, bm[dir + ".final_gain"]);
    return trace;
}

enum class Direction : uint8_t { fwd = 0, bwd = 1 };

/// H^F (left-to-right) or H^B (right-to-left). The backward pass reverses the
/// token order on input and re-reverses the states so backward[t] lines up
/// with original position t.
template <class Real>
EncoderTrace<Real> encode_directional(BoundModel<Real>& bm, const std::vector<int>& ids, Direction dir) {
    if (dir == Direction::fwd) return encode_stack(bm, ids, "fwd");
    std::vector<int> rev(ids.rbegin(), ids.rend());
    EncoderTrace<Real> trace = encode_stack(bm, rev, "bwd");
    trace.states = reverse_rows(bm.tape, trace.states);
    return trace;
}

}  // namespace janus
