#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "janus/grad_check.hpp"
#include "janus/loss.hpp"
#include "janus/train.hpp"

namespace janus {

/// Fusion mask rebuilt with a configurable cross-half gap; offset 2 reproduces
/// the real mask, offset 1 is the deliberately broken mutant whose leakage the
/// checker must catch.
inline BoolGrid fusion_mask_with_offset(long T, long offset) {
    BoolGrid m(2 * T, 2 * T);
    for (long q = 0; q < 2 * T; ++q)
        for (long kv = 0; kv < 2 * T; ++kv) {
            bool ok;
            if (kv < T && q < T) ok = q >= kv;
            else if (kv >= T && q >= T) ok = q <= kv;
            else if (kv >= T && q < T) ok = kv >= T + q + offset;
            else ok = q >= kv + T + offset;
            m.set(q, kv, ok);
        }
    return m;
}

inline std::vector<int> random_base_ids(Rng& rng, long T) {
    std::vector<int> ids(static_cast<size_t>(T));
    for (long i = 0; i < T; ++i) ids[static_cast<size_t>(i)] = static_cast<int>(rng.below(Vocabulary::n_bases));
    return ids;
}

struct LeakageReport {
    bool pass = false;
    double tol = 0;
    double max_diff = 0;
    long worst_target = -1;
    int worst_substitute = -1;
    long worst_row = -1;
    double min_nontarget_change = std::numeric_limits<double>::infinity();
    long substitutions_checked = 0;

    std::string summary() const {
        std::ostringstream os;
        os.precision(3);
        os << (pass ? "pass" : "FAIL") << ": max logit diff " << std::scientific << max_diff << " (tol " << tol
           << ")";
        if (!pass) os << " at target " << worst_target << ", substitute " << worst_substitute << ", row " << worst_row;
        return os.str();
    }
};

/// End-to-end non-leakage: for every prediction instance (row q -> target t)
/// and every substitute token v != x_t, the logits at row q must not move when
/// x_t is replaced. Exact on the real mask because every admissible path is
/// bitwise independent of x_t.
template <class Real>
LeakageReport leakage_check(const ModelConfig& cfg_in, uint64_t seed, long T, double tol,
                            bool mutated_mask = false,
                            double fail_fast_above = std::numeric_limits<double>::infinity()) {
    ModelConfig cfg = cfg_in;
    cfg.seed = seed;
    JanusModel<Real> model = JanusModel<Real>::init(cfg);
    Rng rng(mix_seed(seed, static_cast<uint64_t>(T)));
    {
        // the head initializes to zero; leakage needs generic weights there
        Tensor<Real>& hw = model.p("head.w").value;
        const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
        for (Real& v : hw.data) v = static_cast<Real>(rng.uniform(-bound, bound));
    }
    const std::vector<int> ids = random_base_ids(rng, T);
    const BoolGrid mask = mutated_mask ? fusion_mask_with_offset(T, 1) : FusionMask::build(T).admissible;
    const TargetMap tm = TargetMap::build(T);

    auto logits_for = [&](const std::vector<int>& tokens) {
        Tape<Real> t;
        BoundModel<Real> bm(t, model);
        return t.val(model_forward(bm, tokens, mask).logits);
    };
    const Tensor<Real> base = logits_for(ids);
    const long V = base.cols();

    LeakageReport report;
    report.tol = tol;
    for (long pos = 0; pos < T; ++pos) {
        std::vector<long> rows_targeting, rows_other;
        for (const TargetInstance& inst : tm.instances)
            (inst.target == pos ? rows_targeting : rows_other).push_back(inst.row);
        if (rows_targeting.empty()) continue;
        for (int v = 0; v < V; ++v) {
            if (v == ids[static_cast<size_t>(pos)]) continue;
            std::vector<int> mut = ids;
            mut[static_cast<size_t>(pos)] = v;
            const Tensor<Real> out = logits_for(mut);
            ++report.substitutions_checked;
            for (long row : rows_targeting) {
                for (long j = 0; j < V; ++j) {
                    const double d = std::fabs(static_cast<double>(out.at(row, j)) -
                                               static_cast<double>(base.at(row, j)));
                    if (d > report.max_diff) {
                        report.max_diff = d;
                        report.worst_target = pos;
                        report.worst_substitute = v;
                        report.worst_row = row;
                    }
                }
            }
            double other_change = 0;
            for (long row : rows_other)
                for (long j = 0; j < V; ++j)
                    other_change = std::max(other_change, std::fabs(static_cast<double>(out.at(row, j)) -
                                                                    static_cast<double>(base.at(row, j))));
            report.min_nontarget_change = std::min(report.min_nontarget_change, other_change);
            if (report.max_diff > fail_fast_above) {
                report.pass = false;
                return report;
            }
        }
    }
    report.pass = report.max_diff <= tol;
    return report;
}

struct CausalityReport {
    bool pass = false;
    double worst_violation = 0;  // any nonzero change in the protected region fails
    double min_effect = std::numeric_limits<double>::infinity();  // degeneracy guard
};

/// Perturbation sweep over every input position: H^F_t must be bitwise
/// unaffected by positions > t and H^B_t by positions < t; the allowed region
/// must actually move for generic random weights.
template <class Real>
CausalityReport causality_check(const ModelConfig& cfg_in, uint64_t seed, long T) {
    ModelConfig cfg = cfg_in;
    cfg.seed = seed;
    JanusModel<Real> model = JanusModel<Real>::init(cfg);
    Rng rng(mix_seed(seed, 0xca05a1ull));
    const std::vector<int> ids = random_base_ids(rng, T);

    auto states_for = [&](const std::vector<int>& tokens) {
        Tape<Real> t;
        BoundModel<Real> bm(t, model);
        EncoderTrace<Real> f = encode_directional(bm, tokens, Direction::fwd);
        EncoderTrace<Real> b = encode_directional(bm, tokens, Direction::bwd);
        return std::pair<Tensor<Real>, Tensor<Real>>(t.val(f.states), t.val(b.states));
    };
    const auto [base_f, base_b] = states_for(ids);
    const long d = base_f.cols();

    CausalityReport report;
    auto row_diff = [&](const Tensor<Real>& a, const Tensor<Real>& b, long row) {
        double m = 0;
        for (long j = 0; j < d; ++j)
            m = std::max(m, std::fabs(static_cast<double>(a.at(row, j)) - static_cast<double>(b.at(row, j))));
        return m;
    };
    for (long k = 0; k < T; ++k) {
        std::vector<int> mut = ids;
        mut[static_cast<size_t>(k)] = (ids[static_cast<size_t>(k)] + 1) % Vocabulary::n_bases;
        const auto [f, b] = states_for(mut);
        double effect = 0;
        for (long t = 0; t < T; ++t) {
            const double df = row_diff(base_f, f, t);
            const double db = row_diff(base_b, b, t);
            if (t < k) report.worst_violation = std::max(report.worst_violation, df);
            else effect = std::max(effect, df);
            if (t > k) report.worst_violation = std::max(report.worst_violation, db);
            else effect = std::max(effect, db);
        }
        report.min_effect = std::min(report.min_effect, effect);
    }
    report.pass = report.worst_violation == 0.0 && report.min_effect > 0.0;
    return report;
}

/// 64-bit gradient check of the full model through the Janus objective
/// (cross-entropy plus MoE auxiliary loss) on a random batch.
inline GradCheckReport model_grad_check(const ModelConfig& cfg_in, uint64_t seed, long T, double h = 1e-5) {
    ModelConfig cfg = cfg_in;
    cfg.seed = seed;
    JanusModel<double> model = JanusModel<double>::init(cfg);
    Rng rng(mix_seed(seed, 0x6d6f64656cull));
    SequenceBatch batch;
    TokenSequence seq;
    seq.ids = random_base_ids(rng, T);
    batch.sequences.push_back(seq);
    batch.include.push_back(std::vector<uint8_t>(static_cast<size_t>(T), 1));

    std::vector<Parameter<double>*> params;
    for (auto& p : model.params) params.push_back(&p);
    auto build = [&](Tape<double>& t) {
        BoundModel<double> bm(t, model);
        return janus_loss(bm, batch, cfg.alpha_aux).total;
    };
    return grad_check(params, build, h);
}

}  // namespace janus
