#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "janus/evaluate.hpp"

namespace janus {

struct LabeledSequence {
    std::string seq;
    int label = 0;
};

struct TaskData {
    std::vector<LabeledSequence> examples;
    std::vector<std::string> label_names;  // sorted; index = class id
};

/// Task data as TSV, one `sequence<TAB>label` per line. Labels map to class
/// ids in sorted order.
inline TaskData load_tsv(std::istream& in, const std::string& where) {
    TaskData data;
    std::map<std::string, int> seen;
    std::vector<std::pair<std::string, std::string>> rows;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error("tsv: " + where + ":" + std::to_string(line_no) + ": missing tab separator");
        rows.emplace_back(line.substr(0, tab), line.substr(tab + 1));
        seen.emplace(rows.back().second, 0);
    }
    int next = 0;
    for (auto& [name, id] : seen) {
        id = next++;
        data.label_names.push_back(name);
    }
    for (auto& [seq, label] : rows) data.examples.push_back({std::move(seq), seen.at(label)});
    return data;
}

inline TaskData load_tsv_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("tsv: cannot open " + path);
    return load_tsv(f, path);
}

/// Strand-symmetric pooled representation: fused rows of the sequence and of
/// its reverse complement, mean-pooled over all 2T rows each, averaged.
/// Symmetric by construction: swapping s with rc(s) swaps the two means.
template <class Real>
Var rc_pooled_embed(BoundModel<Real>& bm, const TokenSequence& tokens) {
    for (int id : tokens.ids)
        if (id > Vocabulary::N)
            throw std::runtime_error("rc_pooled_embed: special token in input sequence");
    Tape<Real>& t = bm.tape;
    const TokenSequence rc = reverse_complement(tokens);
    const FusionMask mask = FusionMask::build(tokens.length());
    ForwardTrace<Real> a = model_forward(bm, tokens.ids, mask.admissible);
    ForwardTrace<Real> b = model_forward(bm, rc.ids, mask.admissible);
    Var e1 = mean_axis(t, a.fused, 0);
    Var e2 = mean_axis(t, b.fused, 0);
    return scale(t, add(t, e1, e2), Real(0.5));
}

/// Backbone plus linear head over the pooled representation.
struct Classifier {
    JanusModel<float> backbone;
    std::vector<Parameter<float>> head;  // cls.w [d, n_classes], cls.b [n_classes]
    std::vector<std::string> label_names;

    static Classifier make(JanusModel<float> backbone, long n_classes, std::vector<std::string> names,
                           uint64_t seed) {
        Classifier c;
        c.backbone = std::move(backbone);
        c.label_names = std::move(names);
        const long d = c.backbone.cfg.d_model;
        Rng rng(seed);
        Tensor<float> w = Tensor<float>::zeros({d, n_classes});
        const double bound = 1.0 / std::sqrt(static_cast<double>(d));
        for (float& v : w.data) v = static_cast<float>(rng.uniform(-bound, bound));
        c.head.emplace_back("cls.w", ParamKind::weight, std::move(w));
        c.head.emplace_back("cls.b", ParamKind::bias, Tensor<float>::zeros({n_classes}));
        return c;
    }

    std::vector<Parameter<float>*> all_params() {
        std::vector<Parameter<float>*> out;
        for (auto& p : backbone.params) out.push_back(&p);
        for (auto& p : head) out.push_back(&p);
        return out;
    }
};

/// Class probabilities for one sequence through the strand-symmetric pooling.
inline std::pair<int, std::vector<double>> classify(Classifier& c, const TokenSequence& tokens) {
    Tape<float> t;
    BoundModel<float> bm(t, c.backbone);
    Var emb = rc_pooled_embed(bm, tokens);
    Var logits = add_rowvec(t, matmul(t, reshape(t, emb, {1, c.backbone.cfg.d_model}), t.use(c.head[0])),
                            t.use(c.head[1]));
    Var probs = softmax_rows(t, logits);
    const Tensor<float>& p = t.val(probs);
    std::vector<double> row(p.data.begin(), p.data.end());
    return {argmax_lowest(row), row};
}

struct FinetuneReport {
    double train_accuracy = 0;
    double val_accuracy = 0;
    long epochs_run = 0;
    long best_epoch = 0;
};

struct FinetuneOptions {
    long epochs = 10;
    long batch = 16;
    double lr = 1e-3;
    double backbone_lr_ratio = 0.1;  // backbone trains 10x slower than the head
    bool head_only = false;
    long patience = 3;  // early stop after this many epochs without val improvement
    double val_fraction = 0.2;
    uint64_t seed = 7;
};

/// Downstream classification: cross-entropy over the linear head (full model
/// by default, backbone at a lower rate), early-stopped on validation
/// accuracy; the best-epoch parameters win.
inline FinetuneReport finetune(Classifier& c, const TaskData& task, const FinetuneOptions& opt) {
    if (task.examples.size() < 4) throw std::runtime_error("finetune: need at least 4 labeled examples");
    {
        const int first = task.examples.front().label;
        bool multi = false;
        for (const auto& e : task.examples) multi |= e.label != first;
        if (!multi) throw std::runtime_error("finetune: training set has a single class");
    }

    Rng rng(opt.seed);
    std::vector<size_t> order(task.examples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[static_cast<size_t>(rng.below(static_cast<long>(i)))]);
    const size_t n_val = std::max<size_t>(1, static_cast<size_t>(opt.val_fraction * static_cast<double>(order.size())));
    std::vector<size_t> val_idx(order.begin(), order.begin() + static_cast<long>(n_val));
    std::vector<size_t> train_idx(order.begin() + static_cast<long>(n_val), order.end());
    if (train_idx.empty()) throw std::runtime_error("finetune: no training examples after the validation split");

    std::vector<Parameter<float>*> params = c.all_params();
    TrainConfig tc;  // adamw reads the betas/eps/decay defaults from here
    TrainState state = TrainState::fresh(params, opt.seed);

    auto lr_mult = [&](const Parameter<float>& p) {
        if (p.name.rfind("cls.", 0) == 0) return 1.0;
        return opt.head_only ? 0.0 : opt.backbone_lr_ratio;
    };

    auto eval_accuracy = [&](const std::vector<size_t>& idx) {
        long correct = 0;
        for (size_t i : idx) {
            const auto& ex = task.examples[i];
            auto [cls, probs] = classify(c, tokenize(ex.seq));
            correct += cls == ex.label;
        }
        return static_cast<double>(correct) / static_cast<double>(idx.size());
    };

    auto snapshot = [&]() {
        std::vector<Tensor<float>> vals;
        for (auto* p : params) vals.push_back(p->value);
        return vals;
    };
    auto restore = [&](const std::vector<Tensor<float>>& vals) {
        for (size_t i = 0; i < params.size(); ++i) params[i]->value = vals[i];
    };

    FinetuneReport report;
    std::vector<Tensor<float>> best = snapshot();
    double best_val = -1;
    long since_best = 0;
    for (long epoch = 0; epoch < opt.epochs; ++epoch) {
        for (size_t i = train_idx.size(); i > 1; --i)
            std::swap(train_idx[i - 1], train_idx[static_cast<size_t>(rng.below(static_cast<long>(i)))]);
        for (size_t start = 0; start < train_idx.size(); start += static_cast<size_t>(opt.batch)) {
            const size_t end = std::min(train_idx.size(), start + static_cast<size_t>(opt.batch));
            for (auto* p : params) p->zero_grad();
            Tape<float> t;
            BoundModel<float> bm(t, c.backbone);
            Var rows = -1;
            std::vector<int> labels;
            for (size_t i = start; i < end; ++i) {
                const auto& ex = task.examples[train_idx[i]];
                Var emb = reshape(t, rc_pooled_embed(bm, tokenize(ex.seq)), {1, c.backbone.cfg.d_model});
                rows = rows < 0 ? emb : concat_rows(t, rows, emb);
                labels.push_back(ex.label);
            }
            Var logits = add_rowvec(t, matmul(t, rows, t.use(c.head[0])), t.use(c.head[1]));
            Var loss = cross_entropy_mean(t, logits, labels);
            t.backward(loss);
            clip_gradients(params, tc.clip_norm);
            adamw_step(params, state, opt.lr, tc, lr_mult);
            state.step += 1;
        }
        report.epochs_run = epoch + 1;
        const double val = eval_accuracy(val_idx);
        if (val > best_val) {
            best_val = val;
            best = snapshot();
            report.best_epoch = epoch + 1;
            since_best = 0;
        } else if (++since_best >= opt.patience) {
            break;
        }
    }
    restore(best);
    report.val_accuracy = best_val;
    report.train_accuracy = eval_accuracy(train_idx);
    return report;
}

/// Classifier checkpoints reuse the training format; the head rides along as
/// extra named parameters.
inline void save_classifier(const std::string& path, const RunConfig& cfg, Classifier& c) {
    std::vector<Parameter<float>> all;
    for (const auto& p : c.backbone.params) all.push_back(p);
    for (const auto& p : c.head) all.push_back(p);
    save_checkpoint(path, cfg, all, nullptr);
}

inline std::pair<Classifier, RunConfig> load_classifier(const std::string& path,
                                                        std::vector<std::string> label_names) {
    RawCheckpoint raw = load_checkpoint(path);
    JanusModel<float> backbone = JanusModel<float>::init(raw.cfg.model);
    std::vector<Parameter<float>> extra = restore_model(raw, backbone);
    Classifier c;
    c.backbone = std::move(backbone);
    for (auto& p : extra)
        if (p.name.rfind("cls.", 0) == 0) c.head.push_back(std::move(p));
    if (c.head.size() != 2) throw std::runtime_error("classifier checkpoint: head parameters missing");
    if (c.head[0].name != "cls.w") std::swap(c.head[0], c.head[1]);
    c.label_names = std::move(label_names);
    return {std::move(c), raw.cfg};
}

}  // namespace janus
