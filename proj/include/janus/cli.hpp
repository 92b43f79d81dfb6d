#pragma once

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "janus/evaluate.hpp"
#include "janus/fasta.hpp"
#include "janus/finetune.hpp"
#include "janus/manifest.hpp"
#include "janus/synth.hpp"
#include "janus/verify.hpp"

namespace janus::cli {

/// Exit codes: 0 success, 1 verification failure, 2 usage/config error.
constexpr int kOk = 0;
constexpr int kVerificationFailed = 1;
constexpr int kUsageError = 2;

struct Options {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string outdir;
    std::string checkpoint;
    std::string resume;
    std::string task_path;
    std::string pbm_path;
    long T = 16;
    uint64_t seed = 1;
    double tol = -1;  // leakage tolerance; default depends on --bits
    long bits = 32;
    bool mutated = false;
    double h = 1e-5;
    double grad_tol = 1e-4;
    long epochs = 10;
    double lr = 1e-3;
    bool head_only = false;
};

inline RunConfig resolve_config(const Options& opt) {
    ConfigMap cm;
    if (!opt.config_path.empty()) cm.load_file(opt.config_path);
    if (const char* env = std::getenv("JANUS_SEED")) {
        const uint64_t s = cfgdetail::parse_seed("JANUS_SEED", env);
        cm.set("model.seed", std::to_string(s), "env JANUS_SEED");
        cm.set("train.seed", std::to_string(s + 1), "env JANUS_SEED");
        cm.set("data.seed", std::to_string(s + 2), "env JANUS_SEED");
    }
    for (const std::string& ov : opt.overrides) cm.apply_override(ov, "--override");
    return cm.materialize();
}

struct Corpora {
    std::vector<FastaRecord> train_records;
    std::vector<FastaRecord> eval_records;
    std::vector<TokenSequence> train_windows;
    std::vector<TokenSequence> eval_windows;
};

/// Training corpus plus a held-out evaluation corpus, disjoint by record
/// split: synthetic corpora draw the two sets from different seeds, FASTA
/// corpora hold out the trailing tenth of records. Evaluation records are one
/// window long. When `dump_dir` is set, synthesized corpora are written out
/// as FASTA for inspection.
inline Corpora prepare_corpora(const RunConfig& cfg, const std::string& dump_dir = "") {
    Corpora c;
    const long T = cfg.train.seq_len;
    if (!cfg.data.fasta.empty()) {
        std::vector<FastaRecord> all = load_fasta(cfg.data.fasta);
        if (all.size() < 2) throw std::runtime_error("data: need at least 2 FASTA records to split train/eval");
        const size_t n_eval = std::max<size_t>(1, all.size() / 10);
        c.eval_records.assign(all.end() - static_cast<long>(n_eval), all.end());
        c.train_records.assign(all.begin(), all.end() - static_cast<long>(n_eval));
    } else {
        c.train_records = synth_corpus(cfg.data.kind, cfg.data.seed, cfg.data.records, cfg.data.record_len,
                                       cfg.data.motif_density);
        c.eval_records = synth_corpus(cfg.data.kind, cfg.eval.seed, cfg.eval.records, T, cfg.data.motif_density);
        if (!dump_dir.empty()) {
            std::filesystem::create_directories(dump_dir);
            save_fasta(dump_dir + "/corpus.fa", c.train_records);
        }
    }
    for (const FastaRecord& r : c.train_records) {
        auto w = chunk_record(r, T, cfg.train.effective_stride());
        c.train_windows.insert(c.train_windows.end(), w.begin(), w.end());
    }
    for (const FastaRecord& r : c.eval_records) {
        auto w = chunk_record(r, T, T);
        if (!w.empty()) c.eval_windows.push_back(w.front());  // one window per held-out record
    }
    return c;
}

namespace detail {

inline void require_outdir(const Options& opt, const char* cmd) {
    if (opt.outdir.empty())
        throw std::runtime_error(std::string(cmd) + ": --outdir is required (artifacts and manifest land there)");
}

inline int cmd_pretrain(const Options& opt, const std::vector<std::string>& argv) {
    require_outdir(opt, "pretrain");
    RunConfig cfg = resolve_config(opt);
    std::vector<std::string> inputs;
    if (!opt.config_path.empty()) inputs.push_back(opt.config_path);
    if (!cfg.data.fasta.empty()) inputs.push_back(cfg.data.fasta);
    if (!opt.resume.empty()) inputs.push_back(opt.resume);
    write_manifest(opt.outdir, "pretrain", argv, cfg, inputs);
    Corpora corpora = prepare_corpora(cfg, opt.outdir);

    JanusModel<float> model = JanusModel<float>::init(cfg.model);
    TrainState state = TrainState::fresh(model.params, cfg.train.seed);
    if (!opt.resume.empty()) {
        auto [m, s] = load_model(opt.resume);
        if (m.cfg.d_model != cfg.model.d_model)
            throw std::runtime_error("pretrain: resume checkpoint does not match the configured model");
        model = std::move(m);
        state = std::move(s);
    }
    TrainResult r = train(model, state, cfg, corpora.train_windows, opt.outdir);
    if (r.aborted) {
        std::cerr << "pretrain aborted: " << r.abort_reason << "\n";
        std::cerr << "last good checkpoint: " << r.last_checkpoint << "\n";
        return kVerificationFailed;
    }
    std::cout << "trained " << state.step << " steps; final ce " << state.last_ce << "; checkpoint "
              << r.last_checkpoint << "\n";
    return kOk;
}

inline int cmd_eval(const Options& opt, const std::vector<std::string>& argv) {
    require_outdir(opt, "eval");
    auto [model, state] = load_model(opt.checkpoint);
    RawCheckpoint raw = load_checkpoint(opt.checkpoint);
    RunConfig cfg = raw.cfg;
    {  // overrides (and env) win over the checkpoint's embedded config
        ConfigMap cm;
        cm.load_text(serialize(cfg), "checkpoint config");
        if (const char* env = std::getenv("JANUS_SEED")) {
            const uint64_t s = cfgdetail::parse_seed("JANUS_SEED", env);
            cm.set("model.seed", std::to_string(s), "env JANUS_SEED");
            cm.set("train.seed", std::to_string(s + 1), "env JANUS_SEED");
            cm.set("data.seed", std::to_string(s + 2), "env JANUS_SEED");
        }
        for (const std::string& ov : opt.overrides) cm.apply_override(ov, "--override");
        cfg = cm.materialize();
    }
    write_manifest(opt.outdir, "eval", argv, cfg, {opt.checkpoint});
    Corpora corpora = prepare_corpora(cfg);
    EvalReport r = eval_last_token(model, cfg.train.objective, corpora.eval_windows);
    r.model_id = opt.checkpoint;
    write_eval_report(opt.outdir, r);
    std::cout << "last-token accuracy " << r.accuracy << " (n=" << r.n << "), ce " << r.ce << ", ppl " << r.ppl
              << "\n";
    return kOk;
}

inline int cmd_compare(const Options& opt, const std::vector<std::string>& argv) {
    require_outdir(opt, "compare");
    RunConfig cfg = resolve_config(opt);
    std::vector<std::string> inputs;
    if (!opt.config_path.empty()) inputs.push_back(opt.config_path);
    write_manifest(opt.outdir, "compare", argv, cfg, inputs);
    Corpora corpora = prepare_corpora(cfg, opt.outdir);
    RunConfig jc = cfg, mc = cfg;
    jc.train.objective = Objective::janus;
    mc.train.objective = Objective::mlm;
    CompareResult r = compare_paradigms(jc, mc, corpora.train_windows, corpora.eval_windows, opt.outdir);
    if (r.curve.empty()) return kVerificationFailed;
    const ComparePoint& last = r.curve.back();
    std::cout << "final step " << last.step << ": janus acc " << last.acc_janus << ", mlm acc " << last.acc_mlm
              << " (curves in " << opt.outdir << "/compare.csv)\n";
    return kOk;
}

inline int cmd_finetune(const Options& opt, const std::vector<std::string>& argv) {
    require_outdir(opt, "finetune");
    auto [model, state] = load_model(opt.checkpoint);
    RawCheckpoint raw = load_checkpoint(opt.checkpoint);
    write_manifest(opt.outdir, "finetune", argv, raw.cfg, {opt.checkpoint, opt.task_path});
    TaskData task = load_tsv_file(opt.task_path);
    Classifier c = Classifier::make(std::move(model), static_cast<long>(task.label_names.size()),
                                    task.label_names, opt.seed);
    FinetuneOptions fopt;
    fopt.epochs = opt.epochs;
    fopt.lr = opt.lr;
    fopt.head_only = opt.head_only;
    fopt.seed = opt.seed;
    FinetuneReport r = finetune(c, task, fopt);
    const std::string ckpt = opt.outdir + "/classifier.jnsc";
    save_classifier(ckpt, raw.cfg, c);
    std::cout << "finetuned " << r.epochs_run << " epochs (best " << r.best_epoch << "); val accuracy "
              << r.val_accuracy << "; saved " << ckpt << "\n";
    return kOk;
}

inline int cmd_mask_dump(const Options& opt, const std::vector<std::string>& argv) {
    const FusionMask m = FusionMask::build(opt.T);
    for (long q = 0; q < 2 * opt.T; ++q) {
        std::string row(static_cast<size_t>(2 * opt.T), '0');
        for (long k = 0; k < 2 * opt.T; ++k)
            if (m.admissible.at(q, k)) row[static_cast<size_t>(k)] = '1';
        std::cout << row << "\n";
    }
    if (!opt.pbm_path.empty()) {
        std::ofstream f(opt.pbm_path);
        if (!f) throw std::runtime_error("mask-dump: cannot write " + opt.pbm_path);
        f << "P1\n" << 2 * opt.T << ' ' << 2 * opt.T << "\n";
        for (long q = 0; q < 2 * opt.T; ++q) {
            for (long k = 0; k < 2 * opt.T; ++k) f << (m.admissible.at(q, k) ? '1' : '0') << (k + 1 < 2 * opt.T ? " " : "");
            f << "\n";
        }
    }
    if (!opt.outdir.empty()) write_manifest(opt.outdir, "mask-dump", argv, RunConfig{}, {});
    return kOk;
}

inline int cmd_leakage_check(const Options& opt, const std::vector<std::string>& argv) {
    RunConfig cfg = resolve_config(opt);
    if (!opt.outdir.empty()) write_manifest(opt.outdir, "leakage-check", argv, cfg, {});
    const double tol = opt.tol > 0 ? opt.tol : (opt.bits == 64 ? 1e-10 : 1e-5);
    LeakageReport r = opt.bits == 64
                          ? leakage_check<double>(cfg.model, opt.seed, opt.T, tol, opt.mutated)
                          : leakage_check<float>(cfg.model, opt.seed, opt.T, tol, opt.mutated);
    std::cout << "leakage-check T=" << opt.T << " seed=" << opt.seed << " bits=" << opt.bits << " "
              << r.summary() << "\n";
    return r.pass ? kOk : kVerificationFailed;
}

inline int cmd_grad_check(const Options& opt, const std::vector<std::string>& argv) {
    RunConfig cfg = resolve_config(opt);
    if (!opt.outdir.empty()) write_manifest(opt.outdir, "grad-check", argv, cfg, {});
    GradCheckReport r = model_grad_check(cfg.model, opt.seed, opt.T, opt.h);
    std::cout << "grad-check: " << r.entries.size() << " coordinates, max relative error " << r.max_rel_err
              << " at " << r.worst.param << "[" << r.worst.coord << "]"
              << " (analytic " << r.worst.analytic << ", numeric " << r.worst.numeric << ")\n";
    if (r.max_rel_err < opt.grad_tol) return kOk;
    std::cout << "grad-check FAILED: tolerance " << opt.grad_tol << "\n";
    return kVerificationFailed;
}

inline int cmd_audit_params(const Options& opt, const std::vector<std::string>& argv) {
    RunConfig cfg = resolve_config(opt);
    if (!opt.outdir.empty()) write_manifest(opt.outdir, "audit-params", argv, cfg, {});
    JanusModel<float> model = JanusModel<float>::init(cfg.model);
    const ParamAudit a = audit_params(model);
    std::cout << "total parameters:     " << a.total << "\n";
    std::cout << "activated parameters: " << a.activated << "\n";
    return kOk;
}

}  // namespace detail

/// Builds the full CLI; `run` and the flag-registry helpers share it.
inline std::unique_ptr<CLI::App> make_app(Options& opt, int& rc, const std::vector<std::string>& argv) {
    auto app = std::make_unique<CLI::App>("janus: bidirectional genomic language model workbench");
    app->require_subcommand(1);

    auto add_common = [&](CLI::App* sub, bool with_config = true) {
        if (with_config) {
            sub->add_option("--config", opt.config_path, "config file (flat dotted key=value text)");
            sub->add_option("--override", opt.overrides, "config override key=value (wins over file and env)");
        }
        sub->add_option("--outdir", opt.outdir, "output directory (manifest, artifacts)");
    };

    CLI::App* pre = app->add_subcommand("pretrain", "train a model on a FASTA or synthetic corpus");
    add_common(pre);
    pre->add_option("--resume", opt.resume, "resume from a checkpoint");
    pre->callback([&]() { rc = detail::cmd_pretrain(opt, argv); });

    CLI::App* ev = app->add_subcommand("eval", "last-token evaluation of a checkpoint on held-out data");
    add_common(ev);
    ev->add_option("--checkpoint", opt.checkpoint, "model checkpoint")->required();
    ev->callback([&]() { rc = detail::cmd_eval(opt, argv); });

    CLI::App* cmp = app->add_subcommand("compare", "paired janus-vs-mlm learning efficiency curves");
    add_common(cmp);
    cmp->callback([&]() { rc = detail::cmd_compare(opt, argv); });

    CLI::App* ft = app->add_subcommand("finetune", "train a classifier head on TSV task data");
    add_common(ft);
    ft->add_option("--checkpoint", opt.checkpoint, "pretrained model checkpoint")->required();
    ft->add_option("--task", opt.task_path, "task TSV: sequence<TAB>label")->required();
    ft->add_option("--epochs", opt.epochs, "finetuning epochs");
    ft->add_option("--lr", opt.lr, "head learning rate (backbone trains at a tenth)");
    ft->add_flag("--head-only", opt.head_only, "freeze the backbone");
    ft->add_option("--seed", opt.seed, "finetuning seed");
    ft->callback([&]() { rc = detail::cmd_finetune(opt, argv); });

    CLI::App* md = app->add_subcommand("mask-dump", "print the 2Tx2T fusion mask as 0/1 rows");
    add_common(md, false);
    md->add_option("--T", opt.T, "sequence length")->required();
    md->add_option("--pbm", opt.pbm_path, "also write a portable bitmap (P1)");
    md->callback([&]() { rc = detail::cmd_mask_dump(opt, argv); });

    CLI::App* lk = app->add_subcommand("leakage-check", "verify no prediction row can see its target");
    add_common(lk);
    lk->add_option("--T", opt.T, "sequence length");
    lk->add_option("--seed", opt.seed, "model/tokens seed");
    lk->add_option("--tol", opt.tol, "max admissible logit diff (default 1e-5 at 32 bits, 1e-10 at 64)");
    lk->add_option("--bits", opt.bits, "32 or 64")->check(CLI::IsMember({32, 64}));
    lk->add_flag("--mutated", opt.mutated, "use the +1-offset mask mutant (expected to fail)");
    lk->callback([&]() { rc = detail::cmd_leakage_check(opt, argv); });

    CLI::App* gc = app->add_subcommand("grad-check", "finite-difference check of the full model gradient");
    add_common(gc);
    gc->add_option("--T", opt.T, "sequence length");
    gc->add_option("--seed", opt.seed, "model/tokens seed");
    gc->add_option("--fd-step", opt.h, "central difference step");
    gc->add_option("--tol", opt.grad_tol, "max relative error");
    gc->callback([&]() { rc = detail::cmd_grad_check(opt, argv); });

    CLI::App* ap = app->add_subcommand("audit-params", "report activated vs total parameter counts");
    add_common(ap);
    ap->callback([&]() { rc = detail::cmd_audit_params(opt, argv); });

    return app;
}

inline std::string help_text();

inline int run(const std::vector<std::string>& args) {
    Options opt;
    opt.T = 16;
    int rc = kOk;
    auto app = make_app(opt, rc, args);
    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app->parse(reversed);
    } catch (const CLI::CallForHelp&) {
        std::cout << help_text();
        return kOk;
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsageError;
    }
    return rc;
}

inline int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    try {
        return run(args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsageError;
    }
}

/// Every registered flag per subcommand; the no-undocumented-flags test walks
/// this and cross-checks the help text.
inline std::vector<std::pair<std::string, std::string>> registered_flags() {
    Options opt;
    int rc = 0;
    auto app = make_app(opt, rc, {});
    std::vector<std::pair<std::string, std::string>> out;
    for (const CLI::App* sub : app->get_subcommands({}))
        for (const CLI::Option* o : sub->get_options())
            out.emplace_back(sub->get_name(), o->get_name());
    return out;
}

inline std::string help_text() {
    Options opt;
    int rc = 0;
    auto app = make_app(opt, rc, {});
    std::string all = app->help();
    for (CLI::App* sub : app->get_subcommands({})) all += sub->help();
    return all;
}

}  // namespace janus::cli
