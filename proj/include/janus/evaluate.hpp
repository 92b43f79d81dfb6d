#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "janus/train.hpp"

namespace janus {

struct EvalReport {
    std::string model_id;
    std::string task;
    long n = 0;
    double accuracy = 0;
    double ce = 0;
    double ppl = 1;
    double wall_per_1k_steps = 0;  // informational
};

inline int argmax_lowest(const std::vector<double>& row) {
    int best = 0;
    for (size_t j = 1; j < row.size(); ++j)
        if (row[j] > row[static_cast<size_t>(best)]) best = static_cast<int>(j);
    return best;
}

/// Next-token distribution from a prefix: both encoders run over the prefix
/// and the fused forward-half row L-1 (which admits every forward key and no
/// backward key) feeds the head.
template <class Real>
std::vector<double> predict_next(JanusModel<Real>& model, const std::vector<int>& prefix) {
    if (prefix.empty()) throw std::runtime_error("predict_next: prefix must be nonempty");
    Tape<Real> t;
    BoundModel<Real> bm(t, model);
    const long L = static_cast<long>(prefix.size());
    BoolGrid mask;
    if (L >= 2) {
        mask = FusionMask::build(L).admissible;
    } else {
        mask = BoolGrid(2, 2);  // length-1 prefix: each half sees only itself
        mask.set(0, 0, true);
        mask.set(1, 1, true);
    }
    ForwardTrace<Real> tr = model_forward(bm, prefix, mask);
    Var probs = softmax_rows(t, gather_rows(t, tr.logits, {L - 1}));
    const Tensor<Real>& p = t.val(probs);
    return std::vector<double>(p.data.begin(), p.data.end());
}

/// Last-token prediction protocol: the Janus model sees only the first T-1
/// tokens; the masked model sees the full window with the last token masked
/// and is read at that position. `dumped_probs` collects the scored rows when
/// a caller wants to replay the bookkeeping independently.
template <class Real>
EvalReport eval_last_token(JanusModel<Real>& model, Objective objective,
                           const std::vector<TokenSequence>& test,
                           std::vector<std::vector<double>>* dumped_probs = nullptr) {
    if (test.empty()) throw std::runtime_error("eval_last_token: empty test set");
    EvalReport r;
    r.task = "last_token";
    r.model_id = to_string(objective);
    const auto t0 = std::chrono::steady_clock::now();
    double ce_sum = 0;
    long correct = 0;
    for (const TokenSequence& w : test) {
        const long T = w.length();
        if (T < 2) throw std::runtime_error("eval_last_token: windows must have length >= 2");
        const int truth = w.ids[static_cast<size_t>(T - 1)];
        std::vector<double> probs;
        if (objective == Objective::janus) {
            std::vector<int> prefix(w.ids.begin(), w.ids.end() - 1);
            probs = predict_next(model, prefix);
        } else {
            std::vector<int> corrupted = w.ids;
            corrupted[static_cast<size_t>(T - 1)] = Vocabulary::MASK;
            Tape<Real> t;
            BoundModel<Real> bm(t, model);
            const BoolGrid mask = full_mask(T);
            ForwardTrace<Real> tr = model_forward(bm, corrupted, mask);
            Var p = softmax_rows(t, gather_rows(t, tr.logits, {T - 1}));
            const Tensor<Real>& row = t.val(p);
            probs.assign(row.data.begin(), row.data.end());
        }
        if (dumped_probs) dumped_probs->push_back(probs);
        if (argmax_lowest(probs) == truth) ++correct;
        ce_sum += -std::log(std::max(probs[static_cast<size_t>(truth)], 1e-300));
        ++r.n;
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n);
    r.ce = ce_sum / static_cast<double>(r.n);
    r.ppl = std::exp(r.ce);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.wall_per_1k_steps = secs / static_cast<double>(r.n) * 1000.0;
    return r;
}

struct ComparePoint {
    long step = 0;
    double acc_janus = 0, acc_mlm = 0;
    double ce_janus = 0, ce_mlm = 0;
};

struct CompareResult {
    std::vector<ComparePoint> curve;
    TrainResult janus_run;
    TrainResult mlm_run;
};

/// The paired learning-efficiency experiment: identical configs except the
/// objective, same seeds and data order, evaluated on the same held-out
/// windows at every eval interval. Curves land in outdir/compare.csv.
/// `curve_eval_subset` > 0 scores intermediate curve points on that many
/// held-out windows; the final point always uses the full test set.
inline CompareResult compare_paradigms(const RunConfig& janus_cfg, const RunConfig& mlm_cfg,
                                       const std::vector<TokenSequence>& train_windows,
                                       const std::vector<TokenSequence>& test_windows,
                                       const std::string& outdir, long curve_eval_subset = 0) {
    {
        RunConfig a = janus_cfg, b = mlm_cfg;
        a.train.objective = Objective::janus;
        b.train.objective = Objective::janus;
        if (serialize(a) != serialize(b))
            throw std::runtime_error("compare_paradigms: configs must match except train.objective");
        if (janus_cfg.train.objective == mlm_cfg.train.objective)
            throw std::runtime_error("compare_paradigms: the two configs must use different objectives");
    }
    std::filesystem::create_directories(outdir);
    JanusModel<float> jm = JanusModel<float>::init(janus_cfg.model);
    JanusModel<float> mm = JanusModel<float>::init(mlm_cfg.model);
    TrainState js = TrainState::fresh(jm.params, janus_cfg.train.seed);
    TrainState ms = TrainState::fresh(mm.params, mlm_cfg.train.seed);

    CompareResult result;
    const long total_steps = janus_cfg.train.steps;
    auto evaluate_pair = [&](long step) {
        std::vector<TokenSequence> subset;
        const bool trim = curve_eval_subset > 0 && step != total_steps &&
                          curve_eval_subset < static_cast<long>(test_windows.size());
        if (trim) subset.assign(test_windows.begin(), test_windows.begin() + curve_eval_subset);
        const std::vector<TokenSequence>& eval_set = trim ? subset : test_windows;
        ComparePoint pt;
        pt.step = step;
        EvalReport ja = eval_last_token(jm, Objective::janus, eval_set);
        EvalReport mb = eval_last_token(mm, Objective::mlm, eval_set);
        pt.acc_janus = ja.accuracy;
        pt.ce_janus = ja.ce;
        pt.acc_mlm = mb.accuracy;
        pt.ce_mlm = mb.ce;
        result.curve.push_back(pt);
    };

    evaluate_pair(0);
    const long total = total_steps;
    const long every = std::max<long>(1, janus_cfg.eval.every);
    for (long until = std::min(total, every); js.step < total; until = std::min(total, until + every)) {
        RunConfig jc = janus_cfg, mc = mlm_cfg;
        jc.train.steps = until;
        mc.train.steps = until;
        TrainResult jr = train(jm, js, jc, train_windows, outdir + "/janus");
        TrainResult mr = train(mm, ms, mc, train_windows, outdir + "/mlm");
        if (jr.aborted || mr.aborted) {
            result.janus_run = std::move(jr);
            result.mlm_run = std::move(mr);
            break;
        }
        evaluate_pair(until);
        if (until == total) {
            result.janus_run = std::move(jr);
            result.mlm_run = std::move(mr);
            break;
        }
    }

    std::ofstream csv(outdir + "/compare.csv");
    csv << "step,acc_janus,acc_mlm,ce_janus,ce_mlm\n";
    csv.precision(17);
    for (const ComparePoint& p : result.curve)
        csv << p.step << ',' << p.acc_janus << ',' << p.acc_mlm << ',' << p.ce_janus << ',' << p.ce_mlm << '\n';
    return result;
}

/// Writes an EvalReport as a one-row CSV next to a human-readable summary.
inline void write_eval_report(const std::string& outdir, const EvalReport& r) {
    std::filesystem::create_directories(outdir);
    std::ofstream csv(outdir + "/eval.csv");
    csv << "model,task,n,accuracy,ce,ppl,wall_per_1k\n";
    csv.precision(17);
    csv << r.model_id << ',' << r.task << ',' << r.n << ',' << r.accuracy << ',' << r.ce << ',' << r.ppl << ','
        << r.wall_per_1k_steps << '\n';
    std::ofstream txt(outdir + "/eval.txt");
    txt << "task:      " << r.task << "\n"
        << "model:     " << r.model_id << "\n"
        << "examples:  " << r.n << "\n"
        << "accuracy:  " << r.accuracy << "\n"
        << "ce:        " << r.ce << "\n"
        << "ppl:       " << r.ppl << "\n";
}

}  // namespace janus
