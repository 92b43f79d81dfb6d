#pragma once

#include <cmath>
#include <vector>

#include "janus/fusion.hpp"
#include "janus/genome.hpp"

namespace janus {

/// Per-instance diagnostic record: which sequence/position an included loss
/// instance predicted and what it cost.
struct InstanceLoss {
    long seq = 0;
    long position = 0;
    bool fwd_half = false;
    bool included = false;
    double ce = 0;
};

template <class Real>
struct LossBreakdown {
    Var total = -1;  // CE mean + auxiliary term, on the tape
    Var ce = -1;     // CE mean alone
    double ce_value = 0;
    double aux_value = 0;
    long instances_included = 0;
    std::vector<InstanceLoss> per_instance;
    std::vector<RouterStats> stats;   // merged over the batch, one per MoE layer
    std::vector<Var> logits_nodes;    // one [2T, V] node per sequence, for inspection
};

namespace lossdetail {

/// Batch-merged router stats plus the taped auxiliary loss:
/// mean over MoE layers of alpha * N * sum_i f_i P_i, differentiable through P.
template <class Real>
std::pair<Var, std::vector<RouterStats>> merged_aux(Tape<Real>& t,
                                                    const std::vector<std::vector<Routing<Real>>>& per_seq,
                                                    double alpha) {
    std::vector<RouterStats> merged;
    if (per_seq.empty() || per_seq.front().empty()) return {-1, merged};
    const size_t n_layers = per_seq.front().size();
    const size_t B = per_seq.size();
    Var acc = -1;
    for (size_t l = 0; l < n_layers; ++l) {
        const long N = static_cast<long>(per_seq.front()[l].stats.f.size());
        RouterStats m;
        m.f.assign(static_cast<size_t>(N), 0.0);
        m.P.assign(static_cast<size_t>(N), 0.0);
        Var p_mean = -1;
        for (size_t s = 0; s < B; ++s) {
            const Routing<Real>& r = per_seq[s][l];
            m.tokens += r.stats.tokens;
            for (long i = 0; i < N; ++i) {
                m.f[static_cast<size_t>(i)] += r.stats.f[static_cast<size_t>(i)] * static_cast<double>(r.stats.tokens);
                m.P[static_cast<size_t>(i)] += r.stats.P[static_cast<size_t>(i)] * static_cast<double>(r.stats.tokens);
            }
            Var pm = mean_axis(t, r.probs, 0);
            p_mean = p_mean < 0 ? pm : add(t, p_mean, pm);
        }
        for (long i = 0; i < N; ++i) {
            m.f[static_cast<size_t>(i)] /= static_cast<double>(m.tokens);
            m.P[static_cast<size_t>(i)] /= static_cast<double>(m.tokens);
        }
        p_mean = scale(t, p_mean, Real(1) / static_cast<Real>(B));  // equal-length sequences
        Tensor<Real> f_const = Tensor<Real>::zeros({N});
        for (long i = 0; i < N; ++i) f_const[i] = static_cast<Real>(m.f[static_cast<size_t>(i)]);
        Var term = scale(t, sum_all(t, mul(t, p_mean, t.constant(std::move(f_const)))),
                         static_cast<Real>(alpha * static_cast<double>(N)));
        acc = acc < 0 ? term : add(t, acc, term);
        merged.push_back(std::move(m));
    }
    acc = scale(t, acc, Real(1) / static_cast<Real>(n_layers));
    return {acc, merged};
}

}  // namespace lossdetail

/// Janus objective over a batch: every fused prediction row is scored against
/// its target token, averaged over all included instances, plus the MoE
/// auxiliary loss. Instances whose target position is PAD are excluded.
template <class Real>
LossBreakdown<Real> janus_loss(BoundModel<Real>& bm, const SequenceBatch& batch, double alpha,
                               bool zero_backward = false) {
    Tape<Real>& t = bm.tape;
    const long T = batch.seq_len();
    if (T < 2) throw std::runtime_error("janus_loss: batch sequence length must be >= 2");
    const FusionMask mask = FusionMask::build(T);
    const TargetMap tm = TargetMap::build(T);

    LossBreakdown<Real> out;
    std::vector<std::vector<Routing<Real>>> per_seq_moe;
    Var rows = -1;
    std::vector<int> targets;
    std::vector<uint8_t> include;
    for (long s = 0; s < batch.size(); ++s) {
        const TokenSequence& seq = batch.sequences[static_cast<size_t>(s)];
        ForwardTrace<Real> tr = model_forward(bm, seq.ids, mask.admissible, zero_backward);
        per_seq_moe.push_back(std::move(tr.moe));
        out.logits_nodes.push_back(tr.logits);
        std::vector<long> row_idx;
        for (const TargetInstance& inst : tm.instances) {
            row_idx.push_back(inst.row);
            targets.push_back(seq.ids[static_cast<size_t>(inst.target)]);
            include.push_back(batch.include[static_cast<size_t>(s)][static_cast<size_t>(inst.target)]);
            out.per_instance.push_back({s, inst.target, inst.fwd_half, include.back() != 0, 0.0});
        }
        Var gathered = gather_rows(t, tr.logits, std::move(row_idx));
        rows = rows < 0 ? gathered : concat_rows(t, rows, gathered);
    }

    std::vector<Real> inst_ce;
    out.ce = cross_entropy_mean(t, rows, targets, &include, &inst_ce);
    for (size_t i = 0; i < inst_ce.size(); ++i) {
        out.per_instance[i].ce = static_cast<double>(inst_ce[i]);
        out.instances_included += out.per_instance[i].included ? 1 : 0;
    }
    out.ce_value = static_cast<double>(t.val(out.ce)[0]);

    auto [aux, merged] = lossdetail::merged_aux(t, per_seq_moe, alpha);
    out.stats = std::move(merged);
    if (aux >= 0) {
        out.aux_value = static_cast<double>(t.val(aux)[0]);
        out.total = add(t, out.ce, aux);
    } else {
        out.total = out.ce;
    }
    return out;
}

/// Positions masked per sequence by the MLM baseline: ceil(fraction * T),
/// sampled without replacement from the sequence.
inline long mlm_mask_count(long T, double fraction) {
    const long k = static_cast<long>(std::ceil(fraction * static_cast<double>(T)));
    if (k < 1 || k > T) throw std::runtime_error("mlm_loss: sequence too short to mask a position");
    return k;
}

/// The conventional masked objective on the same dual-encoder body: masked
/// inputs, unmasked full fusion attention, cross-entropy only at masked
/// positions against the original tokens (forward-half rows).
template <class Real>
LossBreakdown<Real> mlm_loss(BoundModel<Real>& bm, const SequenceBatch& batch, double fraction, double alpha,
                             Rng& rng) {
    Tape<Real>& t = bm.tape;
    const long T = batch.seq_len();
    if (T < 2) throw std::runtime_error("mlm_loss: batch sequence length must be >= 2");
    const long k = mlm_mask_count(T, fraction);
    const BoolGrid mask = full_mask(T);

    LossBreakdown<Real> out;
    std::vector<std::vector<Routing<Real>>> per_seq_moe;
    Var rows = -1;
    std::vector<int> targets;
    std::vector<uint8_t> include;
    for (long s = 0; s < batch.size(); ++s) {
        const TokenSequence& seq = batch.sequences[static_cast<size_t>(s)];
        // Partial Fisher-Yates draw of k distinct positions.
        std::vector<long> pool(static_cast<size_t>(T));
        for (long i = 0; i < T; ++i) pool[static_cast<size_t>(i)] = i;
        std::vector<long> picked;
        for (long i = 0; i < k; ++i) {
            const long j = i + rng.below(T - i);
            std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
            picked.push_back(pool[static_cast<size_t>(i)]);
        }
        std::sort(picked.begin(), picked.end());

        std::vector<int> corrupted = seq.ids;
        for (long p : picked) corrupted[static_cast<size_t>(p)] = Vocabulary::MASK;
        ForwardTrace<Real> tr = model_forward(bm, corrupted, mask);
        per_seq_moe.push_back(std::move(tr.moe));
        out.logits_nodes.push_back(tr.logits);

        std::vector<long> row_idx;
        for (long p : picked) {
            row_idx.push_back(p);  // forward-half row p predicts position p
            targets.push_back(seq.ids[static_cast<size_t>(p)]);
            include.push_back(batch.include[static_cast<size_t>(s)][static_cast<size_t>(p)]);
            out.per_instance.push_back({s, p, true, include.back() != 0, 0.0});
        }
        Var gathered = gather_rows(t, tr.logits, std::move(row_idx));
        rows = rows < 0 ? gathered : concat_rows(t, rows, gathered);
    }

    std::vector<Real> inst_ce;
    out.ce = cross_entropy_mean(t, rows, targets, &include, &inst_ce);
    for (size_t i = 0; i < inst_ce.size(); ++i) {
        out.per_instance[i].ce = static_cast<double>(inst_ce[i]);
        out.instances_included += out.per_instance[i].included ? 1 : 0;
    }
    out.ce_value = static_cast<double>(t.val(out.ce)[0]);

    auto [aux, merged] = lossdetail::merged_aux(t, per_seq_moe, alpha);
    out.stats = std::move(merged);
    if (aux >= 0) {
        out.aux_value = static_cast<double>(t.val(aux)[0]);
        out.total = add(t, out.ce, aux);
    } else {
        out.total = out.ce;
    }
    return out;
}

}  // namespace janus
