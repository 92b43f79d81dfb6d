#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <set>
#include <sstream>

#include "janus/finetune.hpp"
#include "janus/synth.hpp"

using namespace janus;

namespace {

ModelConfig ft_model(uint64_t seed, long d = 16, long layers = 1) {
    ModelConfig cfg;
    cfg.d_model = d;
    cfg.n_layers = layers;
    cfg.n_heads = 4;
    cfg.ffn_mult = 2;
    cfg.moe_ratio = 0.0;
    cfg.n_experts = 4;
    cfg.mid_attention = -1;
    cfg.seed = seed;
    return cfg;
}

std::string random_bases(Rng& rng, long len) {
    std::string s;
    for (long i = 0; i < len; ++i) s.push_back(Vocabulary::symbol_of(static_cast<int>(rng.below(4))));
    return s;
}

bool contains_motif_either_strand(const std::string& s) {
    return s.find("GATA") != std::string::npos || s.find("TATC") != std::string::npos;
}

/// Balanced "contains GATA on either strand" task over fixed-length sequences.
TaskData gata_task(Rng& rng, long n, long len) {
    TaskData data;
    data.label_names = {"absent", "present"};
    while (static_cast<long>(data.examples.size()) < n) {
        const bool want_positive = data.examples.size() % 2 == 1;
        std::string s = random_bases(rng, len);
        if (want_positive) {
            const std::string motif = rng.uniform() < 0.5 ? "GATA" : "TATC";
            const long at = rng.below(len - 4);
            s.replace(static_cast<size_t>(at), 4, motif);
        } else if (contains_motif_either_strand(s)) {
            continue;  // rejection: negatives must be clean on both strands
        }
        data.examples.push_back({std::move(s), want_positive ? 1 : 0});
    }
    return data;
}

}  // namespace

TEST_CASE("tsv task loading") {
    std::istringstream in("ACGT\tpos\nTTTT\tneg\nGATA\tpos\n");
    TaskData d = load_tsv(in, "inline");
    REQUIRE(d.examples.size() == 3);
    REQUIRE(d.label_names == std::vector<std::string>{"neg", "pos"});  // sorted
    CHECK(d.examples[0].label == 1);
    CHECK(d.examples[1].label == 0);

    std::istringstream bad("ACGT pos\n");
    REQUIRE_THROWS_WITH(load_tsv(bad, "inline"), Catch::Matchers::ContainsSubstring("missing tab"));
}

TEST_CASE("rc_pooled_embed symmetry") {
    JanusModel<float> model = JanusModel<float>::init(ft_model(4));
    Rng rng(9);

    SECTION("embedding a sequence and its reverse complement is bitwise identical") {
        for (int trial = 0; trial < 10; ++trial) {
            TokenSequence s = tokenize(random_bases(rng, 12 + rng.below(10)));
            TokenSequence rc = reverse_complement(s);
            Tape<float> t1, t2;
            BoundModel<float> b1(t1, model), b2(t2, model);
            const Tensor<float> e1 = t1.val(rc_pooled_embed(b1, s));
            const Tensor<float> e2 = t2.val(rc_pooled_embed(b2, rc));
            REQUIRE(e1.data == e2.data);
        }
    }
    SECTION("output is one d_model vector regardless of length") {
        for (long len : {6L, 17L, 40L}) {
            Tape<float> t;
            BoundModel<float> bm(t, model);
            const Tensor<float> e = t.val(rc_pooled_embed(bm, tokenize(random_bases(rng, len))));
            CHECK(e.shape == std::vector<long>{16});
        }
    }
    SECTION("special tokens are rejected") {
        TokenSequence s = tokenize("ACGTAC");
        s.ids.push_back(Vocabulary::MASK);
        Tape<float> t;
        BoundModel<float> bm(t, model);
        REQUIRE_THROWS_WITH(rc_pooled_embed(bm, s), Catch::Matchers::ContainsSubstring("special token"));
    }
}

TEST_CASE("classify") {
    JanusModel<float> model = JanusModel<float>::init(ft_model(6));
    Classifier c = Classifier::make(std::move(model), 3, {"a", "b", "c"}, 11);
    Rng rng(13);

    SECTION("strand symmetric, normalized, deterministic") {
        for (int trial = 0; trial < 25; ++trial) {
            TokenSequence s = tokenize(random_bases(rng, 10 + rng.below(20)));
            auto [cls1, p1] = classify(c, s);
            auto [cls2, p2] = classify(c, reverse_complement(s));
            auto [cls3, p3] = classify(c, s);
            CHECK(cls1 == cls2);
            REQUIRE(p1.size() == 3);
            CHECK(p1 == p2);
            CHECK(p1 == p3);
            double sum = 0;
            for (double v : p1) sum += v;
            CHECK(std::fabs(sum - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("finetune guards") {
    JanusModel<float> model = JanusModel<float>::init(ft_model(8));
    Classifier c = Classifier::make(std::move(model), 2, {"x", "y"}, 3);
    TaskData single;
    single.label_names = {"x", "y"};
    for (int i = 0; i < 8; ++i) single.examples.push_back({"ACGTACGT", 0});
    REQUIRE_THROWS_WITH(finetune(c, single, FinetuneOptions{}),
                        Catch::Matchers::ContainsSubstring("single class"));
}

TEST_CASE("head-only training separates separable embeddings", "[slowish]") {
    // Frozen random encoder; labels assigned by a random hyperplane over the
    // pooled embeddings with a margin, so the task is linearly separable by
    // construction.
    JanusModel<float> model = JanusModel<float>::init(ft_model(10, 16, 1));
    Rng rng(21);
    std::vector<std::string> seqs;
    std::vector<Tensor<float>> embs;
    JanusModel<float>& frozen = model;
    while (seqs.size() < 160) {
        std::string s = random_bases(rng, 16);
        Tape<float> t;
        BoundModel<float> bm(t, frozen);
        embs.push_back(t.val(rc_pooled_embed(bm, tokenize(s))));
        seqs.push_back(std::move(s));
    }
    std::vector<double> w(16);
    for (double& v : w) v = rng.uniform(-1, 1);
    std::vector<double> scores;
    for (const auto& e : embs) {
        double dot = 0;
        for (long j = 0; j < 16; ++j) dot += w[static_cast<size_t>(j)] * e[j];
        scores.push_back(dot);
    }
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[sorted.size() / 2];
    const double margin = 0.1 * (sorted.back() - sorted.front());
    TaskData task;
    task.label_names = {"neg", "pos"};
    for (size_t i = 0; i < seqs.size(); ++i) {
        if (std::fabs(scores[i] - median) < margin) continue;  // drop near-boundary examples
        task.examples.push_back({seqs[i], scores[i] > median ? 1 : 0});
    }
    REQUIRE(task.examples.size() >= 100);

    Classifier c = Classifier::make(std::move(model), 2, task.label_names, 31);
    FinetuneOptions opt;
    opt.head_only = true;
    opt.epochs = 150;
    opt.patience = 150;
    opt.lr = 1e-1;
    opt.seed = 5;
    FinetuneReport r = finetune(c, task, opt);
    INFO("val " << r.val_accuracy << " train " << r.train_accuracy << " epochs " << r.epochs_run);
    CHECK(r.train_accuracy == 1.0);
    CHECK(r.val_accuracy == 1.0);

    SECTION("permuted labels collapse to chance") {
        TaskData shuffled = task;
        Rng perm(77);
        for (size_t i = shuffled.examples.size(); i > 1; --i)
            std::swap(shuffled.examples[i - 1].label,
                      shuffled.examples[static_cast<size_t>(perm.below(static_cast<long>(i)))].label);
        Classifier c2 = Classifier::make(JanusModel<float>::init(ft_model(10, 16, 1)), 2, task.label_names, 31);
        FinetuneOptions o2 = opt;
        o2.epochs = 12;
        o2.patience = 12;
        FinetuneReport r2 = finetune(c2, shuffled, o2);
        INFO("permuted val " << r2.val_accuracy);
        CHECK(r2.val_accuracy < 0.8);  // chance is 0.5 on a ~30-example validation split
    }
}

TEST_CASE("motif task: pretrain on planted_motif then finetune past 0.95", "[slow]") {
    RunConfig cfg;
    cfg.model = ft_model(42, 32, 2);
    cfg.model.n_heads = 4;
    cfg.model.ffn_mult = 2;
    cfg.train.steps = 300;
    cfg.train.batch = 8;
    cfg.train.seq_len = 40;
    cfg.train.checkpoint_every = 300;
    cfg.train.seed = 9;
    auto recs = synth_corpus(SynthKind::planted_motif, 3, 40, 400, 0.03);
    std::vector<TokenSequence> windows;
    for (const auto& r : recs) {
        auto w = chunk_record(r, cfg.train.seq_len, cfg.train.seq_len);
        windows.insert(windows.end(), w.begin(), w.end());
    }
    const std::string dir = (std::filesystem::temp_directory_path() / "janus-ft-motif").string();
    std::filesystem::remove_all(dir);
    JanusModel<float> model = JanusModel<float>::init(cfg.model);
    TrainState st = TrainState::fresh(model.params, cfg.train.seed);
    train(model, st, cfg, windows, dir);
    std::filesystem::remove_all(dir);

    Rng rng(55);
    TaskData task = gata_task(rng, 600, 40);
    Classifier c = Classifier::make(std::move(model), 2, task.label_names, 7);
    FinetuneOptions opt;
    opt.epochs = 24;
    opt.patience = 24;
    opt.lr = 2e-2;
    opt.batch = 16;
    opt.seed = 3;
    FinetuneReport r = finetune(c, task, opt);
    INFO("val " << r.val_accuracy << " after " << r.epochs_run << " epochs");
    CHECK(r.val_accuracy > 0.95);

    SECTION("the finetuned classifier is still exactly strand symmetric") {
        Rng check(66);
        for (int i = 0; i < 50; ++i) {
            TokenSequence s = tokenize(random_bases(check, 40));
            auto [c1, p1] = classify(c, s);
            auto [c2, p2] = classify(c, reverse_complement(s));
            REQUIRE(c1 == c2);
            REQUIRE(p1 == p2);
        }
    }
}

TEST_CASE("mean pooling is stable under row duplication in the all-same-row case") {
    // degenerate length-covariance: pooling identical rows gives that row no
    // matter how many times the data repeats it
    Tape<float> t;
    Tensor<float> row({1, 4}, {0.5f, -1.25f, 3.0f, 0.0f});
    Var one = t.constant(row);
    Var many = one;
    for (int i = 0; i < 3; ++i) many = concat_rows(t, many, many);  // 8 copies
    const Tensor<float> m1 = t.val(mean_axis(t, one, 0));
    const Tensor<float> m8 = t.val(mean_axis(t, many, 0));
    CHECK(m1.data == m8.data);
    CHECK(m1.data == row.data);
}

TEST_CASE("classifier checkpoints round trip") {
    RunConfig cfg;
    cfg.model = ft_model(12);
    JanusModel<float> model = JanusModel<float>::init(cfg.model);
    Classifier c = Classifier::make(std::move(model), 2, {"neg", "pos"}, 5);
    const std::string path = (std::filesystem::temp_directory_path() / "janus-cls.jnsc").string();
    save_classifier(path, cfg, c);
    auto [loaded, loaded_cfg] = load_classifier(path, {"neg", "pos"});
    CHECK(loaded.head[0].value.data == c.head[0].value.data);
    CHECK(loaded.head[1].value.data == c.head[1].value.data);
    Rng rng(8);
    TokenSequence s = tokenize(random_bases(rng, 18));
    auto [c1, p1] = classify(c, s);
    auto [c2, p2] = classify(loaded, s);
    CHECK(c1 == c2);
    CHECK(p1 == p2);
    std::filesystem::remove(path);
}
