#pragma once

#include <string>
#include <vector>

#include "janus/encoder.hpp"
#include "janus/tensor.hpp"

namespace janus {

/// The 2T x 2T admissibility matrix fusing the forward and backward state
/// sequences. Query/key indices run over [H^F_0..H^F_{T-1}, H^B_0..H^B_{T-1}];
/// the four cases keep each half causal in its own direction and force a
/// two-position gap across halves so no query can reach its prediction target.
struct FusionMask {
    long T = 0;
    BoolGrid admissible;

    static FusionMask build(long T) {
        if (T < 2) throw std::runtime_error("fusion mask: T must be >= 2");
        FusionMask m;
        m.T = T;
        m.admissible = BoolGrid(2 * T, 2 * T);
        for (long q = 0; q < 2 * T; ++q) {
            for (long kv = 0; kv < 2 * T; ++kv) {
                bool ok;
                if (kv < T && q < T) ok = q >= kv;
                else if (kv >= T && q >= T) ok = q <= kv;
                else if (kv >= T && q < T) ok = kv >= T + q + 2;
                else ok = q >= kv + T + 2;
                m.admissible.set(q, kv, ok);
            }
        }
        return m;
    }
};

/// All-admissible 2T x 2T grid; the fusion layer of the MLM baseline.
inline BoolGrid full_mask(long T) { return BoolGrid(2 * T, 2 * T, true); }

struct TargetInstance {
    long row;     // query row in [0, 2T)
    long target;  // predicted position in [0, T)
    bool fwd_half;
};

/// Which fused row predicts which token. Forward row i carries left context
/// through i and right context from i+2, hence targets i+1; backward row T+j
/// symmetrically targets j-1. Interior tokens are predicted twice; the two
/// edge rows (forward T-1, backward T) predict nothing.
struct TargetMap {
    long T = 0;
    std::vector<TargetInstance> instances;

    static TargetMap build(long T) {
        if (T < 2) throw std::runtime_error("target map: T must be >= 2");
        TargetMap m;
        m.T = T;
        for (long i = 0; i + 1 < T; ++i) m.instances.push_back({i, i + 1, true});
        for (long j = 1; j < T; ++j) m.instances.push_back({T + j, j - 1, false});
        return m;
    }
};

/// First-principles reachability check, independent of the four-case index
/// arithmetic of FusionMask::build. Encoder dependence sets (H^F_i sees
/// positions 0..i, H^B_j sees j..T-1) are intersected with each query row's
/// contextual role: a forward row i may only consume keys whose dependence
/// set lies inside its left context {0..i} or strictly-right context
/// {i+2..T-1}; backward rows mirror this. `implied` is the admissibility that
/// rule produces and `influence[q]` the union of admitted dependence sets.
struct InfluenceOracle {
    long T = 0;
    BoolGrid implied;
    std::vector<std::vector<uint8_t>> influence;  // [2T][T], 1 = position can affect the row

    static InfluenceOracle build(long T) {
        if (T < 2) throw std::runtime_error("influence oracle: T must be >= 2");
        InfluenceOracle o;
        o.T = T;
        o.implied = BoolGrid(2 * T, 2 * T);
        o.influence.assign(static_cast<size_t>(2 * T), std::vector<uint8_t>(static_cast<size_t>(T), 0));

        auto dep = [T](long kv) {
            std::vector<uint8_t> s(static_cast<size_t>(T), 0);
            if (kv < T)
                for (long p = 0; p <= kv; ++p) s[static_cast<size_t>(p)] = 1;
            else
                for (long p = kv - T; p < T; ++p) s[static_cast<size_t>(p)] = 1;
            return s;
        };
        auto subset = [T](const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
            for (long p = 0; p < T; ++p)
                if (a[static_cast<size_t>(p)] && !b[static_cast<size_t>(p)]) return false;
            return true;
        };
        auto interval = [T](long lo, long hi) {  // clamped [lo, hi]
            std::vector<uint8_t> s(static_cast<size_t>(T), 0);
            for (long p = std::max<long>(lo, 0); p <= std::min<long>(hi, T - 1); ++p) s[static_cast<size_t>(p)] = 1;
            return s;
        };

        for (long q = 0; q < 2 * T; ++q) {
            std::vector<uint8_t> left_ok, right_ok;
            if (q < T) {  // forward row i = q
                left_ok = interval(0, q);
                right_ok = interval(q + 2, T - 1);
            } else {  // backward row j = q - T
                left_ok = interval(0, q - T - 2);
                right_ok = interval(q - T, T - 1);
            }
            for (long kv = 0; kv < 2 * T; ++kv) {
                const std::vector<uint8_t> d = dep(kv);
                const bool ok = kv < T ? subset(d, left_ok) : subset(d, right_ok);
                o.implied.set(q, kv, ok);
                if (ok)
                    for (long p = 0; p < T; ++p)
                        if (d[static_cast<size_t>(p)]) o.influence[static_cast<size_t>(q)][static_cast<size_t>(p)] = 1;
            }
        }
        return o;
    }

    std::vector<long> influence_set(long q) const {
        std::vector<long> out;
        for (long p = 0; p < T; ++p)
            if (influence[static_cast<size_t>(q)][static_cast<size_t>(p)]) out.push_back(p);
        return out;
    }
};

/// Bidirectional global fusion: masked multi-head attention over the
/// concatenated [H^F; H^B] sequence, output projection, residual, final norm.
template <class Real>
Var fused_attention(BoundModel<Real>& bm, Var fwd_states, Var bwd_states, const BoolGrid& mask,
                    std::vector<Var>* head_probs = nullptr) {
    Tape<Real>& t = bm.tape;
    Var r = concat_rows(t, fwd_states, bwd_states);
    if (mask.n_rows != t.val(r).rows() || mask.n_cols != t.val(r).rows())
        throw std::runtime_error("fused_attention: mask size does not match 2T");
    Var proj = multi_head_attention(bm, r, mask, "fuse", bm.model.cfg.n_heads, head_probs);
    return rmsnorm_rows(t, add(t, r, proj), bm["fuse.gain"]);
}

template <class Real>
struct ForwardTrace {
    Var fwd_states = -1;  // [T, d]
    Var bwd_states = -1;  // [T, d]
    Var fused = -1;       // [2T, d]
    Var logits = -1;      // [2T, V]
    std::vector<Routing<Real>> moe;  // forward-stack layers first, then backward
};

/// Full model pass over one sequence: both encoders, fusion under `mask`,
/// shared output head. `zero_backward` blanks the backward states (the
/// left-context-only ablation).
template <class Real>
ForwardTrace<Real> model_forward(BoundModel<Real>& bm, const std::vector<int>& ids, const BoolGrid& mask,
                                 bool zero_backward = false, std::vector<Var>* head_probs = nullptr) {
    Tape<Real>& t = bm.tape;
    ForwardTrace<Real> tr;
    EncoderTrace<Real> f = encode_directional(bm, ids, Direction::fwd);
    EncoderTrace<Real> b = encode_directional(bm, ids, Direction::bwd);
    tr.fwd_states = f.states;
    tr.bwd_states = zero_backward ? scale(t, b.states, Real(0)) : b.states;
    tr.moe = std::move(f.moe);
    for (auto& r : b.moe) tr.moe.push_back(std::move(r));
    tr.fused = fused_attention(bm, tr.fwd_states, tr.bwd_states, mask, head_probs);
    tr.logits = add_rowvec(t, matmul(t, tr.fused, bm["head.w"]), bm["head.b"]);
    return tr;
}

}  // namespace janus
