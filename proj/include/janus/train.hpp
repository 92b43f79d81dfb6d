#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "janus/checkpoint.hpp"
#include "janus/loss.hpp"

namespace janus {

/// Deterministic per-step stream splitter (splitmix64 rounds), so the MLM
/// corruption draws never perturb the shared batch-sampling stream.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t x = a + 0x9e3779b97f4a7c15ull * (b + 1);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

/// Linear warmup from the floor to the peak over the first warmup fraction of
/// steps, then cosine decay back to the floor at the final step.
inline double lr_at(long step, const TrainConfig& cfg) {
    if (step < 0 || step > cfg.steps) throw std::runtime_error("lr_at: step outside [0, steps]");
    const long warm = static_cast<long>(std::ceil(cfg.warmup_frac * static_cast<double>(cfg.steps)));
    const double span = cfg.peak_lr - cfg.floor_lr;
    if (step <= warm) return cfg.floor_lr + span * static_cast<double>(step) / static_cast<double>(warm);
    const double progress = static_cast<double>(step - warm) / static_cast<double>(cfg.steps - warm);
    return cfg.floor_lr + span * 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846));
}

/// Global L2-norm clip over all parameter gradients; returns the pre-clip norm.
inline double clip_gradients(const std::vector<Parameter<float>*>& params, double max_norm) {
    double sq = 0;
    for (const auto* p : params)
        for (float g : p->grad.data) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw std::runtime_error("clip_gradients: non-finite gradient norm");
    if (norm > max_norm) {
        const float s = static_cast<float>(max_norm / norm);
        for (auto* p : params)
            for (float& g : p->grad.data) g *= s;
    }
    return norm;
}

inline double clip_gradients(std::vector<Parameter<float>>& params, double max_norm) {
    std::vector<Parameter<float>*> ptrs;
    for (auto& p : params) ptrs.push_back(&p);
    return clip_gradients(ptrs, max_norm);
}

/// Decoupled-weight-decay Adam with bias correction. Decay touches weight
/// matrices only, never biases, gains or embeddings. `lr_mult` scales the
/// learning rate per parameter (finetuning trains the backbone slower).
inline void adamw_step(const std::vector<Parameter<float>*>& params, TrainState& state, double lr,
                       const TrainConfig& cfg,
                       const std::function<double(const Parameter<float>&)>& lr_mult = nullptr) {
    if (state.m.size() != params.size()) throw std::runtime_error("adamw: state/parameter mismatch");
    const long t = state.step + 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (size_t i = 0; i < params.size(); ++i) {
        Parameter<float>& p = *params[i];
        if (!p.grad.all_finite()) throw std::runtime_error("adamw: non-finite gradient in " + p.name);
        const double eta = lr * (lr_mult ? lr_mult(p) : 1.0);
        for (long j = 0; j < p.value.numel(); ++j) {
            const double g = p.grad[j];
            const double m = cfg.beta1 * state.m[i][j] + (1.0 - cfg.beta1) * g;
            const double v = cfg.beta2 * state.v[i][j] + (1.0 - cfg.beta2) * g * g;
            state.m[i][j] = static_cast<float>(m);
            state.v[i][j] = static_cast<float>(v);
            const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg.adam_eps);
            const double w = p.value[j];
            const double decay = p.kind == ParamKind::weight ? cfg.weight_decay * w : 0.0;
            p.value[j] = static_cast<float>(w - eta * update - eta * decay);
        }
    }
}

inline void adamw_step(std::vector<Parameter<float>>& params, TrainState& state, double lr,
                       const TrainConfig& cfg,
                       const std::function<double(const Parameter<float>&)>& lr_mult = nullptr) {
    std::vector<Parameter<float>*> ptrs;
    for (auto& p : params) ptrs.push_back(&p);
    adamw_step(ptrs, state, lr, cfg, lr_mult);
}

struct MetricsRow {
    long step = 0;
    double ce = 0, aux = 0, ppl = 0, lr = 0, balance = 0, tps = 0;
};

inline std::string metrics_header() { return "step,ce,aux,ppl,lr,balance,tps"; }

inline std::string format_metrics(const MetricsRow& r) {
    std::ostringstream os;
    os.precision(17);
    os << r.step << ',' << r.ce << ',' << r.aux << ',' << r.ppl << ',' << r.lr << ',' << r.balance << ','
       << std::setprecision(6) << r.tps;
    return os.str();
}

struct TrainResult {
    std::vector<MetricsRow> metrics;
    std::string last_checkpoint;
    bool aborted = false;
    std::string abort_reason;
};

/// Draws a batch of windows by index from the shared stream.
inline SequenceBatch sample_batch(const std::vector<TokenSequence>& windows, long batch, Rng& rng) {
    SequenceBatch b;
    for (long i = 0; i < batch; ++i) {
        const TokenSequence& w = windows[static_cast<size_t>(rng.below(static_cast<long>(windows.size())))];
        b.sequences.push_back(w);
        std::vector<uint8_t> inc(w.ids.size());
        for (size_t k = 0; k < w.ids.size(); ++k) inc[k] = w.ids[k] != Vocabulary::PAD;
        b.include.push_back(std::move(inc));
    }
    return b;
}

/// The pretraining loop: batch -> objective -> backward -> clip -> AdamW,
/// metrics appended to outdir/metrics.csv, checkpoints every checkpoint_every
/// steps and at the end. Runs from state.step to cfg.train.steps, so calling
/// it again after an eval continues the same run. A non-finite loss aborts
/// with the last good checkpoint left in place.
inline TrainResult train(JanusModel<float>& model, TrainState& state, const RunConfig& cfg,
                         const std::vector<TokenSequence>& windows, const std::string& outdir) {
    cfg.validate();
    if (windows.empty()) throw std::runtime_error("train: corpus yields no training windows");
    std::filesystem::create_directories(outdir);
    const std::string metrics_path = outdir + "/metrics.csv";
    const bool fresh_file = !std::filesystem::exists(metrics_path) || state.step == 0;
    std::ofstream metrics(metrics_path,
                          fresh_file ? (std::ios::out | std::ios::trunc) : (std::ios::out | std::ios::app));
    if (!metrics) throw std::runtime_error("train: cannot write " + metrics_path);
    if (fresh_file) metrics << metrics_header() << '\n';

    TrainResult result;
    auto checkpoint_path = [&](long step) { return outdir + "/ckpt-" + std::to_string(step) + ".jnsc"; };
    auto write_ckpt = [&](const std::string& path) {
        save_checkpoint(path, cfg, model.params, &state);
        result.last_checkpoint = path;
    };

    while (state.step < cfg.train.steps) {
        const double lr = lr_at(state.step, cfg.train);
        const auto t0 = std::chrono::steady_clock::now();
        SequenceBatch batch = sample_batch(windows, cfg.train.batch, state.rng);
        try {
            model.zero_grads();
            Tape<float> tape;
            BoundModel<float> bm(tape, model);
            LossBreakdown<float> loss;
            if (cfg.train.objective == Objective::janus) {
                loss = janus_loss(bm, batch, cfg.train.alpha_aux);
            } else {
                Rng mask_rng(mix_seed(cfg.train.seed, static_cast<uint64_t>(state.step)));
                loss = mlm_loss(bm, batch, cfg.train.mlm_fraction, cfg.train.alpha_aux, mask_rng);
            }
            tape.backward(loss.total);
            clip_gradients(model.params, cfg.train.clip_norm);
            adamw_step(model.params, state, lr, cfg.train);
            state.step += 1;
            state.last_ce = loss.ce_value;
            state.best_ce = std::min(state.best_ce, loss.ce_value);

            MetricsRow row;
            row.step = state.step;
            row.ce = loss.ce_value;
            row.aux = loss.aux_value;
            row.ppl = std::exp(loss.ce_value);
            row.lr = lr;
            double bal = 0;
            for (const auto& s : loss.stats) bal += s.balance();
            row.balance = loss.stats.empty() ? 0.0 : bal / static_cast<double>(loss.stats.size());
            const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            row.tps = dt > 0 ? static_cast<double>(cfg.train.batch * cfg.train.seq_len) / dt : 0.0;
            metrics << format_metrics(row) << '\n';
            metrics.flush();
            result.metrics.push_back(row);
        } catch (const std::runtime_error& e) {
            result.aborted = true;
            result.abort_reason = e.what();
            break;
        }
        if (state.step % cfg.train.checkpoint_every == 0 && state.step < cfg.train.steps)
            write_ckpt(checkpoint_path(state.step));
    }
    if (!result.aborted) write_ckpt(outdir + "/ckpt-final.jnsc");
    return result;
}

}  // namespace janus
